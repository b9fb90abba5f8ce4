#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "sta/autodiff.hpp"
#include "sta/errors.hpp"
#include "sta/gradcheck.hpp"
#include "sta/nets.hpp"
#include "sta/objectives.hpp"
#include "sta/rng.hpp"

using namespace sta;

namespace {

// A discriminator rigged to output exactly 0.5 on every input: all weights
// and biases zero make the hidden layer 0, the output logit 0, and the
// sigmoid 1/2.
Discriminator constant_half_discriminator(size_t dim, size_t hidden) {
    Discriminator d;
    d.hidden.w = Tensor::zeros({dim, hidden});
    d.hidden.b = Tensor::zeros({hidden});
    d.out.w = Tensor::zeros({hidden, 1});
    d.out.b = Tensor::zeros({1});
    return d;
}

Tensor random_rows(uint64_t seed, size_t n, size_t dim) {
    auto rng = make_rng(seed, {tag_hash("rows")});
    std::uniform_real_distribution<double> dist(-1.5, 1.5);
    Tensor t = Tensor::zeros({n, dim});
    for (double& v : t.data) v = dist(rng);
    return t;
}

}  // namespace

TEST_CASE("gan variant names") {
    // [TRIVIAL]
    CHECK(gan_variant_from_string("log") == GanVariant::log_likelihood);
    CHECK(gan_variant_from_string("least_squares") == GanVariant::least_squares);
    CHECK(gan_variant_from_string("lsgan") == GanVariant::least_squares);
    CHECK_THROWS_AS(gan_variant_from_string("wasserstein"), ConfigError);
    CHECK(to_string(GanVariant::least_squares) == "least_squares");
    CHECK(to_string(GanVariant::log_likelihood) == "log");
}

TEST_CASE("least-squares terms at a constant-0.5 discriminator") {
    // [DERIVED] with D = 1/2 on every input, the least-squares
    // discriminator loss is mean((D(real)-1)^2) + mean(D(fake)^2)
    // = 1/4 + 1/4 = 1/2, and each generator term mean((D(fake)-1)^2) = 1/4,
    // so the two-sided generator term is 1/2. Exact equality: the arithmetic
    // involves only 0.5 and means of equal values.
    const size_t dim = 6, n = 4;
    Discriminator da = constant_half_discriminator(dim, 3);
    Discriminator db = constant_half_discriminator(dim, 3);

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(random_rows(1, n, dim));
    Var fake_a = g.constant(random_rows(2, n, dim));
    Var real_b = g.constant(random_rows(3, n, dim));
    Var fake_b = g.constant(random_rows(4, n, dim));

    AdvTerms t = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, da, db,
                                   GanVariant::least_squares);
    CHECK(t.d_a.value().data[0] == 0.5);
    CHECK(t.d_b.value().data[0] == 0.5);
    CHECK(t.gen.value().data[0] == 0.5);  // 0.25 per domain, two domains
}

TEST_CASE("log-likelihood terms at a constant-0.5 discriminator") {
    // [DERIVED] with D = 1/2: discriminator loss
    // -(mean log D(real) + mean log(1-D(fake))) = -2 log(1/2) = 2 ln 2,
    // and the generator term mean log(1-D(fake)) summed over both domains is
    // 2 log(1/2) = -2 ln 2 (the generator minimizes it).
    const size_t dim = 5, n = 3;
    Discriminator da = constant_half_discriminator(dim, 2);
    Discriminator db = constant_half_discriminator(dim, 2);

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(random_rows(5, n, dim));
    Var fake_a = g.constant(random_rows(6, n, dim));
    Var real_b = g.constant(random_rows(7, n, dim));
    Var fake_b = g.constant(random_rows(8, n, dim));

    AdvTerms t = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, da, db,
                                   GanVariant::log_likelihood);
    const double two_ln2 = 2.0 * std::log(2.0);
    CHECK(t.d_a.value().data[0] == doctest::Approx(two_ln2).epsilon(1e-12));
    CHECK(t.d_b.value().data[0] == doctest::Approx(two_ln2).epsilon(1e-12));
    CHECK(t.gen.value().data[0] == doctest::Approx(-two_ln2).epsilon(1e-12));
}

TEST_CASE("identity transforms give exactly zero cycle loss") {
    // [DERIVED] fresh residual transforms are identities, so
    // G(F(a)) = a and F(G(b)) = b and the L1 round-trip distance is 0.0.
    NetConfig cfg;
    cfg.channels = 2;
    cfg.pool_size = 2;
    cfg.transform_hidden = 3;
    ModelBundle bundle = make_bundle(cfg, 31);
    const size_t dim = cfg.feature_dim();

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(random_rows(9, 5, dim));
    Var real_b = g.constant(random_rows(10, 4, dim));
    Var fake_b = transform_forward(ctx, bundle.f_ab, real_a);
    Var fake_a = transform_forward(ctx, bundle.g_ba, real_b);
    Var cyc = cycle_loss(ctx, real_a, fake_b, real_b, fake_a, bundle.f_ab, bundle.g_ba);
    CHECK(cyc.value().data[0] == 0.0);
}

TEST_CASE("cycle loss oracle for a shift map") {
    // [DERIVED] rig F(x) = x + 1 per coordinate and G = identity on
    // dimension d = 3 with one sample per domain. Then
    //   |a - G(F(a))|_1 = d  and  |b - F(G(b))|_1 = d,
    // and the loss (mean over samples of coordinate-summed L1) is 2d = 6.
    NetConfig cfg;
    cfg.channels = 3;
    cfg.pool_size = 1;
    cfg.transform_hidden = 2;
    ModelBundle bundle = make_bundle(cfg, 32);
    const size_t d = cfg.feature_dim();
    REQUIRE(d == 3);

    // First block of F: l1 maps everything to lrelu(0*x + 1) = 1, l2 sums the
    // two hidden ones with weights (1, 0) -> +1 per coordinate. Second block
    // stays zero (identity). G's blocks stay zero (identity).
    for (double& v : bundle.f_ab.blocks[0].l1.w.data) v = 0.0;
    for (double& v : bundle.f_ab.blocks[0].l1.b.data) v = 1.0;
    Tensor& l2w = bundle.f_ab.blocks[0].l2.w;  // [hidden, d]
    for (double& v : l2w.data) v = 0.0;
    for (size_t col = 0; col < d; ++col) l2w.at({0, col}) = 1.0;

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(Tensor::from({1, 3}, {0.5, -1.0, 2.0}));
    Var real_b = g.constant(Tensor::from({1, 3}, {1.0, 1.0, 1.0}));
    Var fake_b = transform_forward(ctx, bundle.f_ab, real_a);
    Var fake_a = transform_forward(ctx, bundle.g_ba, real_b);

    // F adds one to every coordinate.
    CHECK(fake_b.value().data == std::vector<double>{1.5, 0.0, 3.0});
    // G is the identity.
    CHECK(fake_a.value().data == std::vector<double>{1.0, 1.0, 1.0});

    Var cyc = cycle_loss(ctx, real_a, fake_b, real_b, fake_a, bundle.f_ab, bundle.g_ba);
    // a -> F(a) -> G(F(a)) = a + 1: L1 distance 3. b -> G(b) = b -> F(G(b)) =
    // b + 1: L1 distance 3. Total 6.
    CHECK(cyc.value().data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("cycle loss averages over samples") {
    // [DERIVED] same shift map, two identical samples per domain: the mean
    // over samples leaves the value unchanged at 6; four samples likewise.
    NetConfig cfg;
    cfg.channels = 3;
    cfg.pool_size = 1;
    cfg.transform_hidden = 2;
    ModelBundle bundle = make_bundle(cfg, 33);
    for (double& v : bundle.f_ab.blocks[0].l1.w.data) v = 0.0;
    for (double& v : bundle.f_ab.blocks[0].l1.b.data) v = 1.0;
    Tensor& l2w = bundle.f_ab.blocks[0].l2.w;
    for (double& v : l2w.data) v = 0.0;
    for (size_t col = 0; col < 3; ++col) l2w.at({0, col}) = 1.0;

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(Tensor::from({2, 3}, {0.5, -1.0, 2.0, 0.5, -1.0, 2.0}));
    Var real_b = g.constant(Tensor::from({2, 3}, {1, 1, 1, 1, 1, 1}));
    Var fake_b = transform_forward(ctx, bundle.f_ab, real_a);
    Var fake_a = transform_forward(ctx, bundle.g_ba, real_b);
    Var cyc = cycle_loss(ctx, real_a, fake_b, real_b, fake_a, bundle.f_ab, bundle.g_ba);
    CHECK(cyc.value().data[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("generator objective combines adversarial and cycle terms") {
    // [DERIVED] objective = gen + lambda * cycle checked with exact
    // representable numbers: gen = 0.5 (constant-0.5 discriminator), cycle
    // rigged to 2.0, lambda = 10 -> 20.5 exactly.
    const size_t dim = 4;
    Discriminator da = constant_half_discriminator(dim, 2);
    Discriminator db = constant_half_discriminator(dim, 2);

    Graph g;
    ParamContext ctx(g);
    Var real_a = g.constant(random_rows(11, 2, dim));
    Var fake_a = g.constant(random_rows(12, 2, dim));
    Var real_b = g.constant(random_rows(13, 2, dim));
    Var fake_b = g.constant(random_rows(14, 2, dim));
    AdvTerms t = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, da, db,
                                   GanVariant::least_squares);
    Var cyc = g.constant(Tensor::scalar(2.0));
    Var obj = generator_objective(t, cyc, 10.0);
    CHECK(obj.value().data[0] == 20.5);
}

TEST_CASE("loss breakdown composes the full objective") {
    // [DERIVED] total = d_a + d_b + gen + lambda * cycle with exactly
    // representable values: 0.5 + 0.5 + 0.25 + 10 * 0.125 = 2.5.
    LossBreakdown b = make_breakdown(0.5, 0.5, 0.25, 0.125, 10.0, GanVariant::least_squares);
    CHECK(b.adv_d_a == 0.5);
    CHECK(b.adv_d_b == 0.5);
    CHECK(b.adv_gen == 0.25);
    CHECK(b.cycle == 0.125);
    CHECK(b.total == 2.5);
    CHECK(b.variant == GanVariant::least_squares);
}

TEST_CASE("cross entropy of uniform scores is ln R") {
    // [DERIVED] with R = 8 equal scores 1/8 on every row, the mean negative
    // log score of the truth is ln 8, whatever the labels.
    const size_t R = 8;
    Graph g;
    Tensor scores = Tensor::full({3, R}, 1.0 / double(R));
    std::vector<size_t> labels{0, 3, 7};
    Var ce = cross_entropy_loss(g, g.constant_ref(scores), labels);
    CHECK(ce.value().data[0] == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy oracle on hand-built rows") {
    // [DERIVED] rows score the truth at 1/2 and 1/4:
    // loss = (ln 2 + ln 4) / 2 = 1.5 ln 2.
    Graph g;
    Tensor scores = Tensor::from({2, 2}, {0.5, 0.5, 0.25, 0.75});
    std::vector<size_t> labels{0, 0};
    Var ce = cross_entropy_loss(g, g.constant_ref(scores), labels);
    CHECK(ce.value().data[0] == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-12));

    // [TRIVIAL] contract checks: label out of range, row count mismatch.
    std::vector<size_t> oor{0, 2};
    CHECK_THROWS_AS(cross_entropy_loss(g, g.constant_ref(scores), oor), ContractError);
    std::vector<size_t> short_labels{0};
    CHECK_THROWS_AS(cross_entropy_loss(g, g.constant_ref(scores), short_labels), ContractError);
}

TEST_CASE("weak image loss oracle for uniform scores") {
    // [DERIVED] three rows of uniform 1/8 scores average to s = 1/8 per
    // relation. With exactly one present relation, the loss is
    // -[ln(1/8) + 7 ln(7/8)].
    const size_t R = 8;
    Graph g;
    Tensor scores = Tensor::full({3, R}, 1.0 / double(R));
    std::vector<size_t> present{2};
    Var loss = weak_image_loss(g, g.constant_ref(scores), present, R);
    double expect = -(std::log(1.0 / 8.0) + 7.0 * std::log(7.0 / 8.0));
    CHECK(loss.value().data[0] == doctest::Approx(expect).epsilon(1e-12));

    // [DERIVED] with every relation present the absent term vanishes:
    // loss = -8 ln(1/8) = 8 ln 8.
    std::vector<size_t> all{0, 1, 2, 3, 4, 5, 6, 7};
    Var loss2 = weak_image_loss(g, g.constant_ref(scores), all, R);
    CHECK(loss2.value().data[0] == doctest::Approx(8.0 * std::log(8.0)).epsilon(1e-12));

    // [TRIVIAL] out-of-range relation id.
    std::vector<size_t> bad{8};
    CHECK_THROWS_AS(weak_image_loss(g, g.constant_ref(scores), bad, R), ContractError);
}

TEST_CASE("relation scores are distributions") {
    // [DERIVED] classifier output rows must sum to 1 within 1e-12: softmax
    // rows normalize exactly up to floating-point rounding.
    NetConfig cfg;
    cfg.channels = 4;
    cfg.pool_size = 2;
    cfg.hidden = 6;
    cfg.relations = 5;
    ModelBundle bundle = make_bundle(cfg, 41);
    const size_t dim = cfg.feature_dim();

    Graph g;
    ParamContext ctx(g);
    Var subj = g.constant(random_rows(20, 7, dim));
    Var obj = g.constant(random_rows(21, 7, dim));
    Var scores = relation_scores(ctx, bundle.classifier, subj, obj);
    REQUIRE(scores.value().shape == Shape{7, 5});
    for (size_t r = 0; r < 7; ++r) {
        double total = 0.0;
        for (size_t k = 0; k < 5; ++k) total += scores.value().at({r, k});
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (size_t k = 0; k < 5; ++k) CHECK(scores.value().at({r, k}) > 0.0);
    }
}

// ---------------------------------------------------------------------------
// Gradients through each loss, against finite differences.
// ---------------------------------------------------------------------------

namespace {

// Checks the gradient of `build` for every parameter tensor of `bundle`
// whose name starts with one of `prefixes`, each bound in place.
double check_bundle_grads(ModelBundle& bundle, std::span<const std::string> prefixes,
                          const GradCheckFn& build) {
    double worst = 0.0;
    for (auto& [name, t] : named_params(bundle)) {
        bool wanted = false;
        for (const std::string& p : prefixes) wanted = wanted || name.rfind(p, 0) == 0;
        if (!wanted) continue;
        REQUIRE(t->numel() <= 64);
        worst = std::max(worst, grad_check(build, std::span<Tensor>(t, 1)));
    }
    return worst;
}

}  // namespace

TEST_CASE("grad: adversarial terms through live transforms") {
    // [DERIVED] generator objective differentiated through
    // transform -> discriminator for both GAN variants; end-to-end
    // tolerance 1e-4.
    NetConfig cfg;
    cfg.channels = 2;
    cfg.pool_size = 2;
    cfg.hidden = 3;
    cfg.transform_hidden = 2;
    cfg.relations = 2;
    const size_t dim = cfg.feature_dim();

    for (GanVariant variant : {GanVariant::least_squares, GanVariant::log_likelihood}) {
        ModelBundle bundle = make_bundle(cfg, 51);
        auto rng = make_rng(51, {tag_hash("adv"), static_cast<uint64_t>(variant)});
        std::uniform_real_distribution<double> dist(-0.4, 0.4);
        for (TransformNet* net : {&bundle.f_ab, &bundle.g_ba}) {
            for (ResidualBlock& blk : net->blocks) {
                for (double& v : blk.l2.w.data) v = dist(rng);
            }
        }
        Tensor rows_a = random_rows(61, 3, dim);
        Tensor rows_b = random_rows(62, 3, dim);

        GradCheckFn build = [&](Graph& g, std::span<const Var>) {
            ParamContext ctx(g);
            for (auto& [name, t] : named_params(bundle)) ctx.train(*t);
            Var real_a = g.constant_ref(rows_a);
            Var real_b = g.constant_ref(rows_b);
            Var fake_b = transform_forward(ctx, bundle.f_ab, real_a);
            Var fake_a = transform_forward(ctx, bundle.g_ba, real_b);
            AdvTerms t = adversarial_terms(ctx, real_a, fake_a, real_b, fake_b, bundle.d_a,
                                           bundle.d_b, variant);
            Var cyc = cycle_loss(ctx, real_a, fake_b, real_b, fake_a, bundle.f_ab, bundle.g_ba);
            // Sum every party's loss so all parameters receive gradients.
            return add(add(t.d_a, t.d_b), generator_objective(t, cyc, 10.0));
        };
        std::vector<std::string> prefixes{"f.", "g.", "da.", "db."};
        CHECK(check_bundle_grads(bundle, prefixes, build) < 1e-4);
    }
}

TEST_CASE("grad: classification losses through the classifier") {
    // [DERIVED] cross-entropy and weak loss differentiated through
    // relation_scores; tolerance 1e-4.
    NetConfig cfg;
    cfg.channels = 2;
    cfg.pool_size = 2;
    cfg.hidden = 3;
    cfg.relations = 3;
    ModelBundle bundle = make_bundle(cfg, 52);
    const size_t dim = cfg.feature_dim();
    Tensor subj = random_rows(63, 4, dim);
    Tensor obj = random_rows(64, 4, dim);
    std::vector<size_t> labels{0, 2, 1, 2};
    std::vector<size_t> present{0, 2};

    GradCheckFn ce = [&](Graph& g, std::span<const Var>) {
        ParamContext ctx(g);
        for (auto& [name, t] : named_params(bundle)) ctx.train(*t);
        Var scores =
            relation_scores(ctx, bundle.classifier, g.constant_ref(subj), g.constant_ref(obj));
        return cross_entropy_loss(g, scores, labels);
    };
    GradCheckFn weak = [&](Graph& g, std::span<const Var>) {
        ParamContext ctx(g);
        for (auto& [name, t] : named_params(bundle)) ctx.train(*t);
        Var scores =
            relation_scores(ctx, bundle.classifier, g.constant_ref(subj), g.constant_ref(obj));
        return weak_image_loss(g, scores, present, cfg.relations);
    };
    std::vector<std::string> prefixes{"cls."};
    CHECK(check_bundle_grads(bundle, prefixes, ce) < 1e-4);
    CHECK(check_bundle_grads(bundle, prefixes, weak) < 1e-4);
}
