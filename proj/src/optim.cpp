#include "vcd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vcd {

void adam_update(Matrix& param, const Matrix& grad, AdamMoments& state, std::int64_t step, const AdamConfig& cfg) {
    if (state.m.rows() != param.rows() || state.m.cols() != param.cols() || state.v.rows() != param.rows() ||
        state.v.cols() != param.cols() || grad.rows() != param.rows() || grad.cols() != param.cols()) {
        throw ad::ShapeError("adam_update: state/grad shape does not match parameter");
    }
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    param.array() -= cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    moments_.reserve(params_.size());
    for (const ad::Parameter* p : params_) {
        moments_.push_back({Matrix::Zero(p->value.rows(), p->value.cols()),
                            Matrix::Zero(p->value.rows(), p->value.cols())});
    }
}

void Adam::step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        adam_update(params_[i]->value, params_[i]->grad, moments_[i], step_, cfg_);
    }
}

void Adam::zero_grad() {
    for (ad::Parameter* p : params_) p->zero_grad();
}

double clip_grad_norm(const std::vector<ad::Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (ad::Parameter* p : params) p->grad *= s;
    }
    return norm;
}

}  // namespace vcd
