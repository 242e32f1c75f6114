"""SSIM of a constant-0 patch against a constant-255 patch, in exact arithmetic.

With zero variance the structure term is 1 and only luminance remains:
(2*mu_a*mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
"""
from fractions import Fraction

K1, K2, L = Fraction(1, 100), Fraction(3, 100), 255
c1 = (K1 * L) ** 2
c2 = (K2 * L) ** 2
mu_a, mu_b = 0, 255
lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
struct = (2 * 0 + c2) / (0 + 0 + c2)
value = lum * struct
print(value)
print(repr(float(value)))
