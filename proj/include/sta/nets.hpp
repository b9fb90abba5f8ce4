#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sta/autodiff.hpp"
#include "sta/io.hpp"
#include "sta/tensor.hpp"

namespace sta {

// Axis-aligned box on a cell grid, half-open: cells x in [x0, x1), y in
// [y0, y1). A valid box has positive extent on both axes.
struct Box {
    size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    size_t width() const { return x1 - x0; }
    size_t height() const { return y1 - y0; }
    size_t area() const { return width() * height(); }
    friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

// Spatial feature grid stored as rows of channels: data has shape
// [height*width, channels], row index y*width + x.
struct FeatureMap {
    size_t height = 0, width = 0, channels = 0;
    Tensor data;

    static FeatureMap zeros(size_t height, size_t width, size_t channels);
    double at(size_t y, size_t x, size_t c) const;
    double& at(size_t y, size_t x, size_t c);
    void check_box(const Box& box) const;  // contract error when out of bounds
};

// Decides, per tensor, whether a forward pass binds it as a trainable leaf
// (gradients flow and are written back) or as a constant. Parameter groups
// are registered with train() before building the step's graph.
class ParamContext {
public:
    explicit ParamContext(Graph& g) : g_(&g) {}

    void train(Tensor& t) { trainable_.emplace(&t, &t); }
    void train_all(std::span<Tensor* const> params) {
        for (Tensor* p : params) trainable_.emplace(p, p);
    }

    Var use(const Tensor& t);
    Graph& graph() { return *g_; }

private:
    Graph* g_;
    std::unordered_map<const Tensor*, Tensor*> trainable_;
};

struct LinearLayer {
    Tensor w;  // [in, out]
    Tensor b;  // [out]

    Var forward(ParamContext& ctx, Var x) const;  // x: [n, in] -> [n, out]
};

// 1x1 convolution over a feature map (a linear map applied per cell),
// followed by a leaky ReLU.
struct OaLayer {
    LinearLayer proj;  // [channels, channels]
};

struct ResidualBlock {
    LinearLayer l1;
    LinearLayer l2;
};

// Feature-space transform between the two object domains. The residual form
// stacks two blocks of x + l2(lrelu(l1(x))) with the second linear of each
// block zero-initialized, so a fresh net is exactly the identity. The
// plain form is a single l2(lrelu(l1(x))) without the shortcut.
struct TransformNet {
    std::vector<ResidualBlock> blocks;
    bool use_shortcut = true;
};

// Two-layer discriminator ending in a sigmoid; scores in (0, 1). The paired
// form concatenates each row with its cyclic successor before scoring, so the
// decision can depend on co-occurring samples.
struct Discriminator {
    LinearLayer hidden;
    LinearLayer out;
    bool paired = false;
};

// Relation head: concat(subject, object) -> two hidden layers -> bias-free
// projection to relation logits -> softmax.
struct RelationClassifier {
    LinearLayer h1;
    LinearLayer h2;
    Tensor w_rel;  // [hidden, relations]
};

struct NetConfig {
    size_t channels = 20;
    size_t pool_size = 3;
    size_t hidden = 256;
    // Width of the domain-transform bottleneck. Deliberately small: a narrow
    // transform cannot absorb the whole domain gap by itself, which pushes the
    // adversarial pressure back onto the shared projection layer.
    size_t transform_hidden = 96;
    size_t relations = 8;
    bool paired_discriminator = false;
    bool residual_transforms = true;
    double leaky_slope = 0.2;

    size_t feature_dim() const { return pool_size * pool_size * channels; }
    void validate() const;
    json to_json() const;
    static NetConfig from_json(const json& j);
};

struct ModelBundle {
    NetConfig config;
    OaLayer oa;
    TransformNet f_ab;  // subject features -> object feature space
    TransformNet g_ba;  // object features -> subject feature space
    Discriminator d_a;
    Discriminator d_b;
    RelationClassifier classifier;
};

// Deterministic initialization: weights ~ Normal(0, sqrt(2/fan_in)) from
// per-tensor streams derived from `seed`, biases zero, residual-block second
// linears zero.
ModelBundle make_bundle(const NetConfig& config, uint64_t seed);

// All parameters in a fixed canonical order with stable names; the order is
// part of the checkpoint contract.
std::vector<std::pair<std::string, Tensor*>> named_params(ModelBundle& bundle);

std::vector<Tensor*> generator_params(ModelBundle& bundle);      // oa + f_ab + g_ba
std::vector<Tensor*> discriminator_a_params(ModelBundle& bundle);
std::vector<Tensor*> discriminator_b_params(ModelBundle& bundle);
std::vector<Tensor*> classifier_params(ModelBundle& bundle);
std::vector<Tensor*> oa_params(ModelBundle& bundle);

// A feature map lifted onto a graph: `rows` has shape [height*width, channels].
struct MapVar {
    Var rows;
    size_t height = 0, width = 0, channels = 0;
};

// Raw map as a graph constant (used by the no-projection baseline).
MapVar lift_map(ParamContext& ctx, const FeatureMap& map);

// Applies the OA projection and activation to every cell.
MapVar oa_forward(ParamContext& ctx, const OaLayer& oa, const FeatureMap& map, double slope = 0.2);

// Max-pools each box into a pool x pool grid per channel and flattens to one
// row; output shape [boxes, pool*pool*channels]. Gradients route to each
// bin's first row-major argmax cell.
Var roi_pool(const MapVar& map, std::span<const Box> boxes, size_t pool);

// Convenience non-graph pooling of raw map features.
Tensor roi_pool_plain(const FeatureMap& map, std::span<const Box> boxes, size_t pool);

// The half-open cell range [begin, end) covered by pooling bin k of P along
// one axis of the half-open interval [lo, hi). Never empty.
std::pair<size_t, size_t> pool_bin_range(size_t lo, size_t hi, size_t pool, size_t k);

Var transform_forward(ParamContext& ctx, const TransformNet& net, Var x, double slope = 0.2);
Var discriminator_forward(ParamContext& ctx, const Discriminator& d, Var x, double slope = 0.2);
Var relation_scores(ParamContext& ctx, const RelationClassifier& cls, Var subject, Var object,
                    double slope = 0.2);

}  // namespace sta
