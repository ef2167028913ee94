#pragma once

#include <string>
#include <vector>

#include "eqf/continuation.hpp"

/// Small systems with closed-form answers, wrapped as "micro" models with
/// identity lifting and restriction unless noted.
namespace eqf::testsys {

/// x' = p - x^2 + c. Parameters p, c.
ModelFamily quadratic_fold();
/// x' = p x - x^3. Parameter p.
ModelFamily pitchfork();
/// x' = p - x. Parameter p.
ModelFamily linear();
/// u = (a, b): a' = -k_slow a, b' = -k_fast (b - c a); R(u) = a + b,
/// L(x) = (x, 0). With c = 0 the lifting lands exactly on the slow subspace.
/// Parameters k_slow (1), k_fast (100), c (0).
ModelFamily slow_fast();
/// Hopf normal form in Cartesian form with mu = p1 - p2:
/// x' = mu x - omega y - x r^2, y' = omega x + mu y - y r^2.
/// Parameters p1, p2, omega (1).
ModelFamily hopf_normal_form();

/// Looks a family up by name: fold, quadratic, pitchfork, linear, slowfast, hopf.
ModelFamily by_name(const std::string& name);
/// Parameter names accepted by the named system.
std::vector<std::string> parameter_names(const std::string& name);

}  // namespace eqf::testsys
