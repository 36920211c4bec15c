#ifndef RWKVASR_SELFCHECK_HPP
#define RWKVASR_SELFCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

// Built-in property verification, shared by the `verify` CLI subcommand and
// the test suite. Suites: "equivalence" (parallel vs recurrent evaluation,
// offline vs streaming decode), "gradients" (finite-difference checks over
// every parameter), "oracle" (independent reference implementations), "all".

namespace rwkvasr {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;  // measured numbers for the log line
};

std::vector<CheckResult> run_verify_suite(const std::string& suite, std::uint64_t seed);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace rwkvasr

#endif
