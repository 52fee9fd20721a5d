#!/usr/bin/env python3
"""Regenerate the observation fixtures in this directory.

The fixtures are synthetic: annual totals follow published US national
drug-overdose death counts (NCHS/CDC aggregates), and the age profile is a
two-component gamma mixture whose components drift apart after the early
2000s, mimicking the published age patterns. They are NOT a CDC WONDER
export; see README.md in this directory for the query recipe that produces
the real thing.

Counts of 1-9 are written as "Suppressed", matching WONDER's disclosure
rules.
"""

import numpy as np
from scipy.special import gammainc

EDGES = [0, 1, 5] + list(range(10, 101, 5)) + [120]
LABELS = (
    ["< 1 year", "1-4 years"]
    + [f"{lo}-{lo + 4} years" for lo in range(5, 100, 5)]
    + ["100+ years"]
)
CODES = ["1", "1-4"] + [f"{lo}-{lo + 4}" for lo in range(5, 100, 5)] + ["100+"]

# Published national annual totals (approximate, all drug-overdose deaths).
TOTALS = {
    1999: 16849, 2000: 17415, 2001: 19394, 2002: 23518, 2003: 25785,
    2004: 27424, 2005: 29813, 2006: 34425, 2007: 36010, 2008: 36450,
    2009: 37004, 2010: 38329, 2011: 41340, 2012: 41502, 2013: 43982,
    2014: 47055, 2015: 52404, 2016: 63632, 2017: 70237, 2018: 67367,
    2019: 70630, 2020: 91799,
}

# Approximate US resident population (persons).
POPULATION = {
    2000: 282162411, 2001: 284968955, 2002: 287625193, 2003: 290107933,
    2004: 292805298, 2005: 295516599, 2006: 298379912, 2007: 301231207,
    2008: 304093966, 2009: 306771529, 2010: 309321666, 2011: 311582564,
    2012: 313873685, 2013: 316057727, 2014: 318386421, 2015: 320742673,
    2016: 323071342, 2017: 325147121, 2018: 327167439, 2019: 328239523,
    2020: 331501080,
}


def gamma_bin_mass(lo, hi, mean, sd):
    alpha = (mean / sd) ** 2
    beta = mean / sd**2
    return gammainc(alpha, beta * hi) - gammainc(alpha, beta * lo)


def year_counts(year, rng):
    """22-bin death counts for one year."""
    k = year - 1999
    # older component: prescription/cocaine era, mean drifting upward
    mean_a, sd_a = 39.0 + 0.45 * k, 13.0
    # younger component: splits off after 2002 (synthetic-opioid era)
    mean_b = 39.0 - (0.05 * k if year < 2003 else 0.2 + 0.42 * (year - 2002))
    sd_b = 11.0
    weight_a = 0.55 - 0.005 * k

    total = TOTALS[year]
    counts = []
    for lo, hi in zip(EDGES[:-1], EDGES[1:]):
        mass = weight_a * gamma_bin_mass(lo, hi, mean_a, sd_a) + (
            1.0 - weight_a
        ) * gamma_bin_mass(lo, hi, mean_b, sd_b)
        expected = total * mass
        counts.append(int(rng.poisson(expected)) if expected > 0 else 0)
    return counts


def main():
    rng = np.random.default_rng(20260809)
    years = sorted(TOTALS)
    data = {year: year_counts(year, rng) for year in years}

    with open("observations.csv", "w") as f:
        f.write("year,bin_low,bin_high,deaths\n")
        for year in years:
            for (lo, hi), count in zip(zip(EDGES[:-1], EDGES[1:]), data[year]):
                shown = "Suppressed" if 1 <= count <= 9 else str(count)
                f.write(f"{year},{lo},{hi},{shown}\n")

    with open("wonder.txt", "w") as f:
        header = [
            "Notes", "Five-Year Age Groups", "Five-Year Age Groups Code",
            "Year", "Year Code", "Deaths", "Population", "Crude Rate",
        ]
        f.write("\t".join(f'"{h}"' for h in header) + "\n")
        for year in years:
            for label, code, count in zip(LABELS, CODES, data[year]):
                shown = "Suppressed" if 1 <= count <= 9 else str(count)
                rate = "Suppressed" if shown == "Suppressed" else "Unreliable"
                row = ["", label, code, str(year), str(year), shown, "Not Applicable", rate]
                f.write("\t".join(f'"{v}"' if i < 5 else v for i, v in enumerate(row)) + "\n")
            total_row = ["Total", "", "", str(year), str(year), str(sum(data[year])),
                         "Not Applicable", "Unreliable"]
            f.write("\t".join(f'"{v}"' if i < 5 else v for i, v in enumerate(total_row)) + "\n")
        f.write("\"---\"\n")
        f.write("\"Synthetic fixture: two-component gamma age mixture scaled to published\"\n")
        f.write("\"national annual totals. Not CDC WONDER data.\"\n")

    with open("population.csv", "w") as f:
        f.write("year,population\n")
        for year in sorted(POPULATION):
            f.write(f"{year},{POPULATION[year]}\n")

    grand_total = sum(sum(v) for v in data.values())
    print(f"wrote {len(years)} years, {grand_total} total deaths")


if __name__ == "__main__":
    main()
