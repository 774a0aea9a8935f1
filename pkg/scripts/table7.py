"""Print the sequence-iteration cost table for both summation readings.

    python scripts/table7.py
"""

from activelo.efficiency import BudgetParams, format_report, report


def main():
    p = BudgetParams()
    print("round counts (train 7, infer 6):")
    print(format_report(report(p, train_rounds=7, infer_rounds=6)))
    print()
    print(f"round counts (train {p.iter + 1}, infer {p.iter}):")
    print(format_report(report(p, train_rounds=p.iter + 1, infer_rounds=p.iter)))


if __name__ == "__main__":
    main()
