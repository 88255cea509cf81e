#include "vcd/gaussian.hpp"

#include <stdexcept>

namespace vcd {

using ad::Var;

Var clip_logvar(const Var& logvar, double floor) { return ad::clamp_min(logvar, floor); }

Var gaussian_reparam_sample(const GaussianVar& params, const Var& noise) {
    if (params.mean.shape() != params.logvar.shape() || params.mean.shape() != noise.shape()) {
        throw ad::ShapeError("gaussian_reparam_sample: mean " + params.mean.shape().str() + ", logvar " +
                             params.logvar.shape().str() + ", noise " + noise.shape().str());
    }
    if (!params.mean.value().allFinite() || !params.logvar.value().allFinite()) {
        throw std::domain_error("gaussian_reparam_sample: non-finite parameters");
    }
    return params.mean + ad::exp(ad::scale(params.logvar, 0.5)) * noise;
}

Var gaussian_kl_elementwise(const GaussianVar& q, const GaussianVar& p) {
    // 0.5 * (lv_p - lv_q + exp(lv_q - lv_p) + (m_q - m_p)^2 exp(-lv_p) - 1)
    Var ratio = ad::exp(q.logvar - p.logvar);
    Var mahal = ad::square(q.mean - p.mean) * ad::exp(ad::neg(p.logvar));
    Var inner = (p.logvar - q.logvar) + ratio + mahal;
    return ad::scale(ad::add_scalar(inner, -1.0), 0.5);
}

Var gaussian_kl(const GaussianVar& q, const GaussianVar& p) { return ad::sum(gaussian_kl_elementwise(q, p)); }

Var gaussian_log_prob(const Var& x, const GaussianVar& dist) {
    constexpr double log_two_pi = 1.8378770664093454835606594728112;
    Var z2 = ad::square(x - dist.mean) * ad::exp(ad::neg(dist.logvar));
    return ad::scale(ad::add_scalar(dist.logvar + z2, log_two_pi), -0.5);
}

double gaussian_kl_value(const GaussianParams& q, const GaussianParams& p) {
    const auto lq = q.logvar.array();
    const auto lp = p.logvar.array();
    const auto dm = q.mean.array() - p.mean.array();
    return 0.5 * (lp - lq + (lq - lp).exp() + dm.square() * (-lp).exp() - 1.0).sum();
}

}  // namespace vcd
