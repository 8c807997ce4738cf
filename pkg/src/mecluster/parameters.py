"""Default simulation constants.

Error-model, covariate, random-effect and health-model parameters fitted
to repeated 24-hour dietary recalls of children (nine food-group
components; covariates age, BMI z-score and education level). Studies
with M=5 use the first five components.
"""

from __future__ import annotations

import numpy as np

COMPONENTS = (
    "component_1", "component_2", "component_3", "component_4", "component_5",
    "component_6", "component_7", "component_8", "component_9",
)
COVARIATES = ("age", "bmi_z", "isced_high")

LAMBDA = np.array([0.36, 0.39, 1.53, 0.30, 0.76, 0.38, 0.39, 0.48, 0.30])
BETA0 = np.array([25.5, 26.8, 25.4, -0.26, 3.00, 10.3, 8.99, 56.4, 28.1])
# rows: component, columns: age, BMI z-score, education
BETA = np.array([
    [-0.48, -0.62, 0.35],
    [-0.11, -0.51, 0.39],
    [0.07, -0.33, -0.07],
    [0.10, 0.08, 0.15],
    [-0.04, -0.07, 0.10],
    [-0.20, -0.25, 0.39],
    [0.02, -0.17, 0.19],
    [-0.12, -0.35, -1.15],
    [-0.11, -0.30, -0.03],
])
SIGMA2_U = np.array([8.9, 10.5, 10.8, 0.17, 0.11, 1.1, 2.5, 65.5, 4.4])
SIGMA2_EPS = np.array([38.1, 51.0, 47.5, 0.55, 0.38, 10.3, 13.4, 194.6, 11.3])

COV_MEAN = np.array([12.0, 0.5, 0.5])
COV_COV = np.array([
    [3.8, 0.0, 0.0],
    [0.0, 1.2, -0.1],
    [0.0, -0.1, 0.2],
])
# the third covariate is dichotomised at this value after drawing
DICHOTOMISE_AT = 0.5

U_CORR = np.array([
    [1.00, 0.05, 0.29, -0.03, 0.28, 0.93, 0.03, 0.27, 0.42],
    [0.05, 1.00, 0.23, -0.20, 0.29, 0.03, 0.85, 0.54, 0.64],
    [0.29, 0.23, 1.00, -0.46, 0.44, 0.28, 0.18, 0.16, 0.23],
    [-0.03, -0.20, -0.46, 1.00, -0.31, -0.02, -0.15, -0.11, -0.15],
    [0.28, 0.29, 0.44, -0.31, 1.00, 0.28, 0.26, 0.29, 0.40],
    [0.93, 0.03, 0.28, -0.02, 0.28, 1.00, 0.03, 0.28, 0.38],
    [0.03, 0.85, 0.18, -0.15, 0.26, 0.03, 1.00, 0.45, 0.52],
    [0.27, 0.54, 0.16, -0.11, 0.29, 0.28, 0.45, 1.00, 0.84],
    [0.42, 0.64, 0.23, -0.15, 0.40, 0.38, 0.52, 0.84, 1.00],
])

# outcome variant A: usual intake only; variant B: usual intake and reports
HEALTH_A = {
    5: dict(alpha0=0.5728, alpha_x=[-0.0021, -0.0058, 0.0316],
            alpha_y=[3e-4, -8e-4, -0.0218, -0.0751, 0.0301], sigma_e=0.9872),
    9: dict(alpha0=0.5464, alpha_x=[-0.002, -0.0221, 0.0307],
            alpha_y=[-4e-4, -0.0011, -0.0157, -0.0733, 0.0037, 0.0048, 5e-4, -3e-4, 3e-4],
            sigma_e=0.988),
}
HEALTH_B = {
    5: dict(alpha0=0.6949, alpha_x=[0.0644, -0.0512, 0.0659],
            alpha_y=[5e-4, -4e-4, -0.337, -0.2695, 0.7173],
            alpha_ybar=[-1e-4, -1e-4, 0.0813, 0.06, -0.2353], sigma_e=0.9862),
    9: dict(alpha0=0.6581, alpha_x=[0.0599, -0.0591, 0.0602],
            alpha_y=[0.0012, 8e-4, -0.3252, -0.2568, 0.7547, -0.0062, -0.0097, 1e-4, -3e-4],
            alpha_ybar=[-4e-4, -5e-4, 0.0788, 0.0578, -0.2551, 0.0019, 0.0025, -2e-4, 2e-4],
            sigma_e=0.9878),
}

# share of individuals with T = 1, 2, 3, 4 report days
T_DISTRIBUTION = {1: 0.35, 2: 0.20, 3: 0.40, 4: 0.05}
GOLD_STANDARD_DAYS = (7, 28)
TRUTH_DAYS = 1000
