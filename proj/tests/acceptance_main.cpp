#include "ebsde/acceptance.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    int criterion = 0;
    std::uint64_t seed = ebsde::AcceptanceOptions{}.seed;
    app.add_option("--criterion", criterion, "criterion to run (1-12); all when omitted")->check(CLI::Range(1, 12));
    app.add_option("--seed", seed, "base seed");
    CLI11_PARSE(app, argc, argv);

    ebsde::AcceptanceOptions opts;
    opts.seed = seed;
    bool all_passed = true;
    for (const auto& entry : ebsde::acceptance_criteria()) {
        if (criterion != 0 && entry.first != criterion) continue;
        const ebsde::CriterionResult r = ebsde::run_criterion(entry.first, opts);
        std::cout << ebsde::status_line(r) << std::endl;
        all_passed = all_passed && r.passed;
    }
    return all_passed ? 0 : 1;
}
