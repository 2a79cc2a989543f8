#pragma once

namespace kronfit {

/// I_x(a, b), the regularized incomplete beta function, by Lentz's continued fraction.
[[nodiscard]] double regularized_incomplete_beta(double a, double b, double x);

/// P(F > f) for F ~ F(d1, d2).
[[nodiscard]] double f_upper_tail(double f, double d1, double d2);

}  // namespace kronfit
