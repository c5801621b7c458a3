#include "lcl/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "lcl/errors.hpp"

namespace lcl {

namespace {

double evaluate(const std::function<Var(Tape&)>& loss) {
    Tape tape;
    const Var l = loss(tape);
    const double v = l.value()[0];
    if (!std::isfinite(v)) throw EvaluationError("grad_check: loss is not finite");
    return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var(Tape&)>& loss, const std::vector<Parameter*>& params,
                           double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ParameterError("grad_check: eps must lie in [1e-7, 1e-3]");
    for (Parameter* p : params) {
        p->set_active(true);
        p->zero_grad();
    }
    {
        Tape tape;
        const Var l = loss(tape);
        if (!std::isfinite(l.value()[0])) throw EvaluationError("grad_check: loss is not finite");
        tape.backward(l);
    }
    GradCheckResult res;
    for (Parameter* p : params) {
        const Tensor analytic = p->grad();
        Tensor& w = p->value();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double orig = w[i];
            w[i] = orig + eps;
            const double up = evaluate(loss);
            w[i] = orig - eps;
            const double down = evaluate(loss);
            w[i] = orig;
            const double fd = (up - down) / (2.0 * eps);
            const double a = analytic[i];
            const double rel = std::abs(a - fd) / (std::abs(a) + std::abs(fd) + 1e-10);
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.entries;
        }
    }
    return res;
}

}  // namespace lcl
