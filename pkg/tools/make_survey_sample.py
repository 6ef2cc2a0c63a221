"""Regenerate the bundled 50-row synthetic survey sample.

Values are random draws, not survey responses. A few rows are planted so that
every preprocessing rule has something to do.
"""

import csv
import json
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "csicausal" / "data"


def main(seed=2025, n=50):
    schema = json.loads((DATA / "survey_schema.json").read_text())
    header = list(schema["rename"])
    rng = np.random.default_rng(seed)
    purposes = schema["purposes"]["personal"] * 3 + schema["purposes"]["work"]
    accom = ["Hotel or hostel", "Rental cottage or apartment", "With friends or relatives",
             "Housing provided by an employer", "Camping", "Other"]
    rows = []
    for i in range(n):
        nights = int(rng.integers(1, 13))
        rows.append({
            "Age group": rng.choice(["15-24 years", "25-44 years", "45-64 years", "Minimum 65 years"]),
            "Gender": rng.choice(["Male", "Female", "Male", "Female", "Other"]),
            "Country of residence": rng.choice(["Sweden", "Germany", "Estonia", "Japan", "USA"]),
            "Purpose of the trip": purposes[i % len(purposes)],
            "Length of stay": nights,
            "Main destination": rng.choice(["Helsinki", "Helsinki metropolitan area", "Coast and archipelago",
                                            "Lakeland", "Lapland"]),
            "Quarter": int(rng.integers(1, 5)),
            "Mode of transportation": rng.choice(["Ferry", "Airplane"]),
            "Accommodation": accom[int(rng.choice(6, p=[0.45, 0.2, 0.12, 0.1, 0.08, 0.05]))],
            "First reservation": int(rng.integers(0, 8)),
            "Travel group": rng.choice(["I travel alone", "I travel with my spouse/significant other",
                                        "I travel with my family, relatives or friends", "Other"]),
            "Overnight stays in secondary destinations": int(rng.poisson(0.5)),
            **{h: rng.choice(["Yes", "No"]) for h in header if h.startswith("Experienced") or h == "Over 50km trips"},
            "Expenditure": round(float(rng.gamma(3.0, 60.0 * nights ** 0.8)), 2),
            "Weight": round(float(rng.uniform(50, 400)), 3),
        })
    # planted rule triggers
    rows[3]["Purpose of the trip"] = "Visiting friends or relatives"
    rows[17]["Purpose of the trip"] = "Visiting friends or relatives"
    rows[5]["Gender"] = "Don't want to say"
    rows[8]["Overnight stays in secondary destinations"] = ""
    rows[11]["Length of stay"] = 20
    rows[23]["Expenditure"] = 0
    rows[29]["Main destination"] = ""
    rows[31]["First reservation"] = ""
    with open(DATA / "survey_sample.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
