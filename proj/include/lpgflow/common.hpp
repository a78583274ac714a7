#ifndef LPGFLOW_COMMON_HPP
#define LPGFLOW_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lpgflow {

// Error taxonomy. The CLI maps these onto stable exit codes, so new failure
// kinds should get a new type here instead of reusing one of these loosely.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Non-finite value detected mid-run. step is the training/sampling step at
// which the fault was raised, or -1 when there is no meaningful step index.
struct NumericFault : std::runtime_error {
    int64_t step;
    explicit NumericFault(const std::string& msg, int64_t step = -1)
        : std::runtime_error(msg), step(step) {}
};

struct DimMismatch : std::runtime_error {
    explicit DimMismatch(const std::string& msg) : std::runtime_error(msg) {}
};

struct NoData : std::runtime_error {
    explicit NoData(const std::string& msg) : std::runtime_error(msg) {}
};

struct CorruptFile : std::runtime_error {
    explicit CorruptFile(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoFault : std::runtime_error {
    explicit IoFault(const std::string& msg) : std::runtime_error(msg) {}
};

#define LPG_REQUIRE(cond, msg)                                   \
    do {                                                         \
        if (!(cond)) {                                           \
            throw ::lpgflow::ContractViolation(std::string(msg)); \
        }                                                        \
    } while (0)

inline bool is_finite(float x) {
    return std::isfinite(x);
}

}  // namespace lpgflow

#endif  // LPGFLOW_COMMON_HPP
