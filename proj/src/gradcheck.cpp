#include "driftlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "driftlab/error.hpp"

namespace driftlab::ad {
namespace {

double evaluate(const ScalarGraph& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) {
        leaves.push_back(tape.constant(t));
    }
    const Var out = f(tape, leaves);
    if (out.value().size() != 1) {
        throw ShapeError("gradient_check: graph output is not a scalar");
    }
    return out.value().data[0];
}

} // namespace

GradCheckReport gradient_check(const ScalarGraph& f, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& options) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> leaves;
        for (const auto& t : inputs) {
            leaves.push_back(tape.leaf(t, true));
        }
        const Gradients g = tape.backward(f(tape, leaves));
        for (const auto& v : leaves) {
            analytic.push_back(g.of(v));
        }
    }
    double gmax = 0.0;
    for (const auto& g : analytic) {
        for (double x : g.data) {
            gmax = std::max(gmax, std::abs(x));
        }
    }
    const double floor = std::max(options.floor * gmax, 1e-12);

    GradCheckReport report;
    std::vector<Tensor> work = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::size_t n = inputs[i].size();
        const std::size_t stride =
            options.max_entries > 0 ? std::max<std::size_t>(1, n / static_cast<std::size_t>(options.max_entries)) : 1;
        for (std::size_t j = 0; j < n; j += stride) {
            const double x = inputs[i].data[j];
            const double e = options.step * std::max(1.0, std::abs(x));
            auto central = [&](double step) {
                const double xp = x + step, xm = x - step;
                work[i].data[j] = xp;
                const double fp = evaluate(f, work);
                work[i].data[j] = xm;
                const double fm = evaluate(f, work);
                work[i].data[j] = x;
                return (fp - fm) / (xp - xm);
            };
            const double numeric = central(e);
            if (options.consistency > 0.0) {
                const double half = central(0.5 * e);
                if (std::abs(numeric - half) > options.consistency * std::max({std::abs(numeric), std::abs(half), floor})) {
                    ++report.inconsistent;
                    continue;
                }
            }
            const double a = analytic[i].data[j];
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
            ++report.checked;
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel > report.max_rel_error || report.worst.empty()) {
                if (rel >= report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst = "input " + std::to_string(i) + ", element " + std::to_string(j);
                }
            }
        }
    }
    return report;
}

} // namespace driftlab::ad
