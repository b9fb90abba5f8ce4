#pragma once

#include <span>
#include <string>

#include "sta/autodiff.hpp"
#include "sta/nets.hpp"

namespace sta {

// Flavor of the adversarial objective. `log_likelihood` is the classic
// minimax form (discriminators maximize E[log D(real)] + E[log(1-D(fake))];
// generators minimize E[log(1-D(fake))]); `least_squares` replaces the log
// terms with squared distances to the real/fake targets 1 and 0.
enum class GanVariant { log_likelihood, least_squares };

GanVariant gan_variant_from_string(const std::string& name);
std::string to_string(GanVariant v);

// Per-party adversarial losses, each expressed as a quantity to minimize:
// `d_a`/`d_b` train the two discriminators, `gen` trains the transforms.
struct AdvTerms {
    Var d_a;
    Var d_b;
    Var gen;
};

// Scores the four batches with the two discriminators and assembles the
// party losses. `fake_a` is expected to come from the B->A transform and
// `fake_b` from A->B; they may be graph constants (discriminator steps) or
// live transform outputs (generator steps).
AdvTerms adversarial_terms(ParamContext& ctx, Var real_a, Var fake_a, Var real_b, Var fake_b,
                           const Discriminator& d_a, const Discriminator& d_b, GanVariant variant,
                           double slope = 0.2);

// Cycle-consistency loss: mean over samples of the L1 distance (summed over
// coordinates) between each sample and its round-trip reconstruction.
// `fake_b` must be f_ab(real_a) and `fake_a` must be g_ba(real_b); the
// remaining half of each cycle is applied here.
Var cycle_loss(ParamContext& ctx, Var real_a, Var fake_b, Var real_b, Var fake_a,
               const TransformNet& f_ab, const TransformNet& g_ba, double slope = 0.2);

// Generator objective: adversarial generator term plus lambda times the
// cycle loss.
Var generator_objective(const AdvTerms& adv, Var cycle, double lambda);

// Scalar record of one step's losses. `total` composes the full objective:
// both discriminator terms, the generator's adversarial term, and the
// weighted cycle term.
struct LossBreakdown {
    double adv_d_a = 0.0;
    double adv_d_b = 0.0;
    double adv_gen = 0.0;
    double cycle = 0.0;
    double total = 0.0;
    GanVariant variant = GanVariant::least_squares;
};

LossBreakdown make_breakdown(double adv_d_a, double adv_d_b, double adv_gen, double cycle,
                             double lambda, GanVariant variant);

// Mean negative log score of the true relation; `scores` rows must be
// distributions over relations (e.g. softmax output).
Var cross_entropy_loss(Graph& g, Var scores, std::span<const size_t> labels);

// Image-level multi-label loss: relation scores are averaged over all rows
// into one score vector s, and every relation contributes
// -[y log s + (1-y) log(1-s)] where y says whether it is present in the
// image. Scores are clamped to [1e-12, 1 - 1e-12] inside the logs.
Var weak_image_loss(Graph& g, Var scores, std::span<const size_t> present_relations,
                    size_t relations);

}  // namespace sta
