"""Regenerates the synthetic fixtures in this directory (numpy, fixed seed).

The shapes and sizes mimic the public datasets the models are usually shown
on; the values themselves are simulated.
"""
import numpy as np

rng = np.random.default_rng(20240607)


def logistic(t):
    return 1.0 / (1.0 + np.exp(-t))


def write(path, header, rows):
    with open(path, "w") as f:
        f.write(header + "\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")


# Dose-response: 8 doses on [4.7, 5.4], sigmoid mortality.
dose = np.round(np.arange(4.7, 5.41, 0.1), 1)
m = rng.integers(40, 60, size=dose.size)
y = rng.binomial(m, logistic(9.0 * (dose - 5.0)))
write("trypanosome_synthetic.csv", "x,y,m", zip(dose, y, m))

# Seroprevalence by age 1..86: rising, saturating prevalence.
age = np.arange(1, 87)
m = np.maximum(5, np.round(120 * np.exp(-age / 40.0))).astype(int) + rng.integers(0, 10, size=age.size)
p = logistic(-2.5 + 3.5 * (1.0 - np.exp(-age / 25.0)))
y = rng.binomial(m, p)
write("hepatitis_b_synthetic.csv", "x,y,m", zip(age, y, m))

# Paper thickness (micrometres), multimodal, 485 samples on [60, 131].
centers = np.array([72, 79, 90, 100, 110, 120, 130], dtype=float)
weights = np.array([0.25, 0.25, 0.10, 0.15, 0.12, 0.08, 0.05])
comp = rng.choice(centers.size, size=485, p=weights)
x = np.clip(np.round(rng.normal(centers[comp], 2.5)), 60, 131).astype(int)
write("hidalgo_synthetic.csv", "x", ((v,) for v in x))

# Daily incidence over 96 days: one epidemic wave, overdispersed counts.
day = np.arange(1, 97)
mu = 2.0 + 45.0 * np.exp(-0.5 * ((day - 40.0) / 12.0) ** 2)
cases = rng.negative_binomial(5.0, 5.0 / (5.0 + mu))
write("zika_synthetic.csv", "x,y", zip(day, cases))
