#!/usr/bin/env python3
"""Tour of the privilege/budget algebra.

A sink privilege is (operation, scope); a budget is the downward-closed set
of privileges a value may still exercise, stored as its maximal antichain.
Combining values intersects budgets, so chains of tools can only narrow what
a value may do next.
"""

from chaincaps import Budget, budget_contains, budget_meet, privilege_leq
from chaincaps.algebra import make_privilege

print("=" * 70)
print("1. Privileges are ordered by scope inclusion")
print("=" * 70)

narrow = make_privilege("http_send", "url_prefix", "https://api.example.com/v1/")
wide = make_privilege("http_send", "url_prefix", "https://api.example.com/")
print(f"  {narrow}")
print(f"    <= {wide} ?", privilege_leq(narrow, wide))
print(f"  the other way around?             ", privilege_leq(wide, narrow))

point = make_privilege("file_write", "exact", "/tmp/reports/q3.md")
folder = make_privilege("file_write", "path_prefix", "/tmp/reports/")
print(f"  {point}")
print(f"    <= {folder} ?", privilege_leq(point, folder))

print()
print("=" * 70)
print("2. Budgets meet by intersection -- the restrictive side wins")
print("=" * 70)

salary_budget = Budget.of([make_privilege("display", "any")])
news_budget = Budget.of([
    make_privilege("display", "any"),
    make_privilege("http_send", "any"),
    make_privilege("email_send", "any"),
])
merged = budget_meet(salary_budget, news_budget)
print(f"  salary data budget: {salary_budget}")
print(f"  news page budget:   {news_budget}")
print(f"  summary of both:    {merged}")

print()
print("=" * 70)
print("3. Membership decides sink calls")
print("=" * 70)

display_req = make_privilege("display", "exact", "user_console")
http_req = make_privilege("http_send", "exact", "https://api.example.com/v1/push")
print(f"  can the summary be displayed?  ", budget_contains(merged, display_req))
print(f"  can the summary be POSTed out? ", budget_contains(merged, http_req))
print()
print("  Routing data through more tools can never flip that second answer")
print("  back to True: meets only remove authority, they never add it.")
