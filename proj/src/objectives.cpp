#include "sta/objectives.hpp"

#include "sta/errors.hpp"

namespace sta {

GanVariant gan_variant_from_string(const std::string& name) {
    if (name == "log") return GanVariant::log_likelihood;
    if (name == "least_squares" || name == "lsgan") return GanVariant::least_squares;
    throw ConfigError("unknown gan variant '" + name + "' (expected 'log' or 'least_squares')");
}

std::string to_string(GanVariant v) {
    return v == GanVariant::log_likelihood ? "log" : "least_squares";
}

namespace {

void check_batch(Var v, const char* name) {
    if (!v.valid()) throw ContractError(std::string("adversarial terms: ") + name + " is invalid");
    if (v.shape().size() != 2) {
        throw ShapeError(std::string("adversarial terms: ") + name + " must be rank 2, got " +
                         shape_str(v.shape()));
    }
}

Var one_minus(Var x) {
    Graph& g = *x.graph;
    return sub(g.constant(Tensor::full(x.shape(), 1.0)), x);
}

Var minus_one(Var x) {
    Graph& g = *x.graph;
    return sub(x, g.constant(Tensor::scalar(1.0)));
}

}  // namespace

AdvTerms adversarial_terms(ParamContext& ctx, Var real_a, Var fake_a, Var real_b, Var fake_b,
                           const Discriminator& d_a, const Discriminator& d_b, GanVariant variant,
                           double slope) {
    check_batch(real_a, "real_a");
    check_batch(fake_a, "fake_a");
    check_batch(real_b, "real_b");
    check_batch(fake_b, "fake_b");

    Var pa_real = discriminator_forward(ctx, d_a, real_a, slope);
    Var pa_fake = discriminator_forward(ctx, d_a, fake_a, slope);
    Var pb_real = discriminator_forward(ctx, d_b, real_b, slope);
    Var pb_fake = discriminator_forward(ctx, d_b, fake_b, slope);

    AdvTerms t;
    if (variant == GanVariant::least_squares) {
        t.d_a = add(mean(square(minus_one(pa_real))), mean(square(pa_fake)));
        t.d_b = add(mean(square(minus_one(pb_real))), mean(square(pb_fake)));
        t.gen = add(mean(square(minus_one(pa_fake))), mean(square(minus_one(pb_fake))));
    } else {
        t.d_a = neg(add(mean(log_clamped(pa_real)), mean(log_clamped(one_minus(pa_fake)))));
        t.d_b = neg(add(mean(log_clamped(pb_real)), mean(log_clamped(one_minus(pb_fake)))));
        t.gen = add(mean(log_clamped(one_minus(pa_fake))), mean(log_clamped(one_minus(pb_fake))));
    }
    return t;
}

Var cycle_loss(ParamContext& ctx, Var real_a, Var fake_b, Var real_b, Var fake_a,
               const TransformNet& f_ab, const TransformNet& g_ba, double slope) {
    check_batch(real_a, "real_a");
    check_batch(fake_b, "fake_b");
    check_batch(real_b, "real_b");
    check_batch(fake_a, "fake_a");
    if (real_a.shape() != fake_b.shape() || real_b.shape() != fake_a.shape()) {
        throw ShapeError("cycle loss: transformed batches must match their sources");
    }
    double na = static_cast<double>(real_a.shape()[0]);
    double nb = static_cast<double>(real_b.shape()[0]);

    Var rec_a = transform_forward(ctx, g_ba, fake_b, slope);
    Var rec_b = transform_forward(ctx, f_ab, fake_a, slope);
    Var term_a = scale(sum(abs(sub(real_a, rec_a))), 1.0 / na);
    Var term_b = scale(sum(abs(sub(real_b, rec_b))), 1.0 / nb);
    return add(term_a, term_b);
}

Var generator_objective(const AdvTerms& adv, Var cycle, double lambda) {
    if (!adv.gen.valid() || !cycle.valid()) {
        throw ContractError("generator objective: invalid terms");
    }
    return add(adv.gen, scale(cycle, lambda));
}

LossBreakdown make_breakdown(double adv_d_a, double adv_d_b, double adv_gen, double cycle,
                             double lambda, GanVariant variant) {
    LossBreakdown b;
    b.adv_d_a = adv_d_a;
    b.adv_d_b = adv_d_b;
    b.adv_gen = adv_gen;
    b.cycle = cycle;
    b.total = adv_d_a + adv_d_b + adv_gen + lambda * cycle;
    b.variant = variant;
    return b;
}

Var cross_entropy_loss(Graph& g, Var scores, std::span<const size_t> labels) {
    if (!scores.valid()) throw ContractError("cross entropy: invalid scores");
    const Shape& s = scores.shape();
    if (s.size() != 2) {
        throw ShapeError("cross entropy expects [n, relations] scores, got " + shape_str(s));
    }
    size_t n = s[0], r = s[1];
    if (labels.size() != n) {
        throw ContractError("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(n) + " score rows");
    }
    Tensor onehot = Tensor::zeros({n, r});
    for (size_t i = 0; i < n; ++i) {
        if (labels[i] >= r) {
            throw ContractError("cross entropy: label " + std::to_string(labels[i]) +
                                " out of range for " + std::to_string(r) + " relations");
        }
        onehot.data[i * r + labels[i]] = 1.0;
    }
    Var picked = mul(log_clamped(scores), g.constant(std::move(onehot)));
    return scale(sum(picked), -1.0 / static_cast<double>(n));
}

Var weak_image_loss(Graph& g, Var scores, std::span<const size_t> present_relations,
                    size_t relations) {
    if (!scores.valid()) throw ContractError("weak loss: invalid scores");
    const Shape& s = scores.shape();
    if (s.size() != 2 || s[1] != relations) {
        throw ShapeError("weak loss expects [n, " + std::to_string(relations) +
                         "] scores, got " + shape_str(s));
    }
    size_t n = s[0];

    Tensor avg_w = Tensor::full({1, n}, 1.0 / static_cast<double>(n));
    Var image_scores = matmul(g.constant(std::move(avg_w)), scores);  // [1, relations]

    Tensor y = Tensor::zeros({1, relations});
    for (size_t rel : present_relations) {
        if (rel >= relations) {
            throw ContractError("weak loss: relation " + std::to_string(rel) +
                                " out of range for " + std::to_string(relations));
        }
        y.data[rel] = 1.0;
    }
    Tensor y_inv = Tensor::zeros({1, relations});
    for (size_t i = 0; i < relations; ++i) y_inv.data[i] = 1.0 - y.data[i];

    Var pos = mul(log_clamped(image_scores), g.constant(std::move(y)));
    Var ones = g.constant(Tensor::full({1, relations}, 1.0));
    Var neg_scores = sub(ones, image_scores);
    Var negp = mul(log_clamped(neg_scores), g.constant(std::move(y_inv)));
    return neg(add(sum(pos), sum(negp)));
}

}  // namespace sta
