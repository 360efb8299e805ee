"""Published PTDF table for the 9-bus case: (line, bus 2, bus 3), printed to 4 dp."""

LINES = ["1-4", "4-5", "5-6", "3-6", "6-7", "7-8", "8-2", "8-9", "9-4"]

TRUE_PTDF = [
    [-1.0000, -1.0000],
    [-0.3613, -0.6152],
    [-0.3613, -0.6152],
    [0.0, 1.0000],
    [-0.3613, 0.3848],
    [-0.3613, 0.3848],
    [-1.0000, 0.0],
    [0.6387, 0.3848],
    [0.6387, 0.3848],
]

SHAP_PTDF = [
    [-0.9999, -0.9999],
    [-0.3613, -0.6151],
    [-0.3613, -0.6151],
    [0.0000, 0.9999],
    [-0.3613, 0.3848],
    [-0.3613, 0.3848],
    [-1.0000, 0.0000],
    [0.6386, 0.3848],
    [0.6386, 0.3848],
]
