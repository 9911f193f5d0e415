#include "adasgn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace adasgn {

namespace {

double rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    return std::abs(analytic - numeric) / denom;
}

void finish(GradCheckReport& report, double tol) {
    report.max_rel_error = 0.0;
    bool finite = true;
    for (double e : report.rel_errors) {
        if (!std::isfinite(e)) finite = false;
        report.max_rel_error = std::max(report.max_rel_error, e);
    }
    report.passed = finite && report.max_rel_error < tol;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h, double tol) {
    Tensor analytic;
    {
        Tape tape;
        Var in = tape.leaf(x);
        Var y = f(tape, in);
        tape.backward(y);
        analytic = tape.grad_or_zero(in);
    }
    auto eval = [&](const Tensor& at) {
        Tape tape;
        tape.set_grad_enabled(false);
        return f(tape, tape.leaf(at, false)).value().item();
    };
    GradCheckReport report;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        probe[i] = x[i] + h;
        const double up = eval(probe);
        probe[i] = x[i] - h;
        const double down = eval(probe);
        probe[i] = x[i];
        report.rel_errors.push_back(rel_error(analytic[i], (up - down) / (2.0 * h)));
    }
    finish(report, tol);
    return report;
}

GradCheckReport finite_diff_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                                         double h, double tol) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(f(tape));
    }
    auto eval = [&] {
        Tape tape;
        tape.set_grad_enabled(false);
        return f(tape).value().item();
    };
    GradCheckReport report;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = eval();
            p->value[i] = orig - h;
            const double down = eval();
            p->value[i] = orig;
            report.rel_errors.push_back(rel_error(p->grad[i], (up - down) / (2.0 * h)));
        }
    }
    finish(report, tol);
    return report;
}

}  // namespace adasgn
