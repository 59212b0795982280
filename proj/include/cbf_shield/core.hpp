#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace cbf {

using Vec3 = Eigen::Vector3d;
using Row3 = Eigen::RowVector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Row6 = Eigen::Matrix<double, 1, 6>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Constraint evaluated too close to its singular point.
struct SingularityError : Error {
    explicit SingularityError(const std::string& msg) : Error(msg) {}
};

// Integration produced non-finite values.
struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// Discrete maximum landed on the final propagation sample (peak not bracketed).
struct HorizonTooShortError : Error {
    explicit HorizonTooShortError(const std::string& msg) : Error(msg) {}
};

// Quadratic peak fit came out non-concave.
struct DegeneratePeakError : Error {
    explicit DegeneratePeakError(const std::string& msg) : Error(msg) {}
};

// No positive guaranteed dissipation rate exists for the configured input set.
struct NoValidAmaxError : Error {
    explicit NoValidAmaxError(const std::string& msg) : Error(msg) {}
};

// A control policy returned an input outside the admissible set.
struct ContractViolationError : Error {
    explicit ContractViolationError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace cbf
