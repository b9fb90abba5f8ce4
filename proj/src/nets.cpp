#include "sta/nets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "sta/errors.hpp"
#include "sta/rng.hpp"

namespace sta {

double iou(const Box& a, const Box& b) {
    if (a.x0 >= a.x1 || a.y0 >= a.y1 || b.x0 >= b.x1 || b.y0 >= b.y1) {
        throw ContractError("iou requires boxes with positive extent");
    }
    size_t ix0 = std::max(a.x0, b.x0), ix1 = std::min(a.x1, b.x1);
    size_t iy0 = std::max(a.y0, b.y0), iy1 = std::min(a.y1, b.y1);
    size_t inter = (ix0 < ix1 && iy0 < iy1) ? (ix1 - ix0) * (iy1 - iy0) : 0;
    size_t uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

FeatureMap FeatureMap::zeros(size_t height, size_t width, size_t channels) {
    if (height == 0 || width == 0 || channels == 0) {
        throw ContractError("feature map dimensions must be positive");
    }
    FeatureMap m;
    m.height = height;
    m.width = width;
    m.channels = channels;
    m.data = Tensor::zeros({height * width, channels});
    return m;
}

double FeatureMap::at(size_t y, size_t x, size_t c) const {
    return data.at({y * width + x, c});
}

double& FeatureMap::at(size_t y, size_t x, size_t c) {
    return data.at({y * width + x, c});
}

void FeatureMap::check_box(const Box& box) const {
    if (box.x0 >= box.x1 || box.y0 >= box.y1 || box.x1 > width || box.y1 > height) {
        throw ContractError("box [" + std::to_string(box.x0) + "," + std::to_string(box.y0) +
                            "," + std::to_string(box.x1) + "," + std::to_string(box.y1) +
                            ") lies outside a " + std::to_string(width) + "x" +
                            std::to_string(height) + " map or is empty");
    }
}

void NetConfig::validate() const {
    if (channels == 0 || pool_size == 0 || hidden == 0 || transform_hidden == 0 ||
        relations == 0) {
        throw ConfigError("net config dimensions must be positive");
    }
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
        throw ConfigError("leaky slope must lie in (0, 1)");
    }
}

json NetConfig::to_json() const {
    json j;
    j["channels"] = channels;
    j["pool_size"] = pool_size;
    j["hidden"] = hidden;
    j["transform_hidden"] = transform_hidden;
    j["relations"] = relations;
    j["paired_discriminator"] = paired_discriminator;
    j["residual_transforms"] = residual_transforms;
    j["leaky_slope"] = leaky_slope;
    return j;
}

NetConfig NetConfig::from_json(const json& j) {
    NetConfig c;
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("net config field '" + std::string(key) + "': " + e.what());
        }
    };
    get("channels", c.channels);
    get("pool_size", c.pool_size);
    get("hidden", c.hidden);
    get("transform_hidden", c.transform_hidden);
    get("relations", c.relations);
    get("paired_discriminator", c.paired_discriminator);
    get("residual_transforms", c.residual_transforms);
    get("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
}

Var ParamContext::use(const Tensor& t) {
    auto it = trainable_.find(&t);
    if (it != trainable_.end()) return g_->leaf(*it->second);
    return g_->constant_ref(t);
}

Var LinearLayer::forward(ParamContext& ctx, Var x) const {
    Var wx = matmul(x, ctx.use(w));
    return add(wx, ctx.use(b));
}

namespace {

Tensor normal_init(Shape shape, size_t fan_in, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& d : t.data) d = dist(rng);
    return t;
}

LinearLayer make_linear(size_t in, size_t out, uint64_t seed, bool zero_weights = false) {
    LinearLayer l;
    l.w = zero_weights ? Tensor::zeros({in, out}) : normal_init({in, out}, in, seed);
    l.b = Tensor::zeros({out});
    return l;
}

}  // namespace

ModelBundle make_bundle(const NetConfig& config, uint64_t seed) {
    config.validate();
    ModelBundle m;
    m.config = config;
    size_t d = config.feature_dim();
    size_t h = config.hidden;
    size_t c = config.channels;

    auto s = [&](const char* tag) { return derive_seed(seed, {tag_hash("init"), tag_hash(tag)}); };

    m.oa.proj = make_linear(c, c, s("oa"));

    auto make_transform = [&](const char* name) {
        TransformNet t;
        t.use_shortcut = config.residual_transforms;
        size_t nblocks = config.residual_transforms ? 2 : 1;
        size_t th = config.transform_hidden;
        for (size_t i = 0; i < nblocks; ++i) {
            ResidualBlock blk;
            std::string tag1 = std::string(name) + ".b" + std::to_string(i) + ".l1";
            std::string tag2 = std::string(name) + ".b" + std::to_string(i) + ".l2";
            blk.l1 = make_linear(d, th, s(tag1.c_str()));
            // With the shortcut, the second linear starts at zero so the whole
            // net begins as the identity map.
            blk.l2 = config.residual_transforms ? make_linear(th, d, 0, /*zero_weights=*/true)
                                                : make_linear(th, d, s(tag2.c_str()));
            t.blocks.push_back(std::move(blk));
        }
        return t;
    };
    m.f_ab = make_transform("f");
    m.g_ba = make_transform("g");

    auto make_disc = [&](const char* name) {
        Discriminator dd;
        dd.paired = config.paired_discriminator;
        size_t in = dd.paired ? 2 * d : d;
        dd.hidden = make_linear(in, h, s((std::string(name) + ".h").c_str()));
        dd.out = make_linear(h, 1, s((std::string(name) + ".out").c_str()));
        return dd;
    };
    m.d_a = make_disc("da");
    m.d_b = make_disc("db");

    m.classifier.h1 = make_linear(2 * d, h, s("cls.h1"));
    m.classifier.h2 = make_linear(h, h, s("cls.h2"));
    m.classifier.w_rel = normal_init({h, config.relations}, h, s("cls.rel"));
    return m;
}

std::vector<std::pair<std::string, Tensor*>> named_params(ModelBundle& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto lin = [&](const std::string& prefix, LinearLayer& l) {
        out.emplace_back(prefix + ".w", &l.w);
        out.emplace_back(prefix + ".b", &l.b);
    };
    lin("oa", m.oa.proj);
    auto transform = [&](const std::string& prefix, TransformNet& t) {
        for (size_t i = 0; i < t.blocks.size(); ++i) {
            lin(prefix + ".b" + std::to_string(i) + ".l1", t.blocks[i].l1);
            lin(prefix + ".b" + std::to_string(i) + ".l2", t.blocks[i].l2);
        }
    };
    transform("f", m.f_ab);
    transform("g", m.g_ba);
    lin("da.h", m.d_a.hidden);
    lin("da.out", m.d_a.out);
    lin("db.h", m.d_b.hidden);
    lin("db.out", m.d_b.out);
    lin("cls.h1", m.classifier.h1);
    lin("cls.h2", m.classifier.h2);
    out.emplace_back("cls.rel.w", &m.classifier.w_rel);
    return out;
}

namespace {

void add_linear(std::vector<Tensor*>& v, LinearLayer& l) {
    v.push_back(&l.w);
    v.push_back(&l.b);
}

void add_transform(std::vector<Tensor*>& v, TransformNet& t) {
    for (auto& blk : t.blocks) {
        add_linear(v, blk.l1);
        add_linear(v, blk.l2);
    }
}

}  // namespace

std::vector<Tensor*> generator_params(ModelBundle& m) {
    std::vector<Tensor*> v;
    add_linear(v, m.oa.proj);
    add_transform(v, m.f_ab);
    add_transform(v, m.g_ba);
    return v;
}

std::vector<Tensor*> discriminator_a_params(ModelBundle& m) {
    std::vector<Tensor*> v;
    add_linear(v, m.d_a.hidden);
    add_linear(v, m.d_a.out);
    return v;
}

std::vector<Tensor*> discriminator_b_params(ModelBundle& m) {
    std::vector<Tensor*> v;
    add_linear(v, m.d_b.hidden);
    add_linear(v, m.d_b.out);
    return v;
}

std::vector<Tensor*> classifier_params(ModelBundle& m) {
    std::vector<Tensor*> v;
    add_linear(v, m.classifier.h1);
    add_linear(v, m.classifier.h2);
    v.push_back(&m.classifier.w_rel);
    return v;
}

std::vector<Tensor*> oa_params(ModelBundle& m) {
    std::vector<Tensor*> v;
    add_linear(v, m.oa.proj);
    return v;
}

MapVar lift_map(ParamContext& ctx, const FeatureMap& map) {
    return MapVar{ctx.graph().constant_ref(map.data), map.height, map.width, map.channels};
}

MapVar oa_forward(ParamContext& ctx, const OaLayer& oa, const FeatureMap& map, double slope) {
    if (oa.proj.w.shape[0] != map.channels) {
        throw ShapeError("oa projection expects " + std::to_string(oa.proj.w.shape[0]) +
                         " channels, map has " + std::to_string(map.channels));
    }
    Var rows = ctx.graph().constant_ref(map.data);
    Var projected = leaky_relu(oa.proj.forward(ctx, rows), slope);
    return MapVar{projected, map.height, map.width, oa.proj.w.shape[1]};
}

std::pair<size_t, size_t> pool_bin_range(size_t lo, size_t hi, size_t pool, size_t k) {
    double extent = static_cast<double>(hi - lo);
    double e0 = static_cast<double>(lo) + extent * static_cast<double>(k) / static_cast<double>(pool);
    double e1 = static_cast<double>(lo) + extent * static_cast<double>(k + 1) / static_cast<double>(pool);
    auto begin = static_cast<size_t>(std::floor(e0));
    auto end = static_cast<size_t>(std::ceil(e1));
    if (end <= begin) end = begin + 1;
    return {begin, end};
}

Var roi_pool(const MapVar& map, std::span<const Box> boxes, size_t pool) {
    if (!map.rows.valid()) throw ContractError("roi_pool: invalid map");
    if (pool == 0) throw ContractError("roi_pool: pool size must be positive");
    if (boxes.empty()) throw ContractError("roi_pool: no boxes");
    Graph& g = *map.rows.graph;
    const Tensor& rows = map.rows.value();
    if (rows.rank() != 2 || rows.shape[0] != map.height * map.width ||
        rows.shape[1] != map.channels) {
        throw ShapeError("roi_pool: map rows have shape " + shape_str(rows.shape) +
                         ", expected [" + std::to_string(map.height * map.width) + ", " +
                         std::to_string(map.channels) + "]");
    }
    size_t n = boxes.size();
    size_t c = map.channels;
    size_t d = pool * pool * c;
    size_t w = map.width;

    for (const Box& b : boxes) {
        if (b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > map.width || b.y1 > map.height) {
            throw ContractError("roi_pool: box [" + std::to_string(b.x0) + "," +
                                std::to_string(b.y0) + "," + std::to_string(b.x1) + "," +
                                std::to_string(b.y1) + ") is empty or outside the map");
        }
    }

    Tensor out = Tensor::zeros({n, d});
    // Row index into the map for each pooled output entry, for gradient routing.
    std::vector<size_t> argmax(n * d);
    for (size_t bi = 0; bi < n; ++bi) {
        const Box& box = boxes[bi];
        for (size_t py = 0; py < pool; ++py) {
            auto [ys, ye] = pool_bin_range(box.y0, box.y1, pool, py);
            for (size_t px = 0; px < pool; ++px) {
                auto [xs, xe] = pool_bin_range(box.x0, box.x1, pool, px);
                for (size_t ch = 0; ch < c; ++ch) {
                    double best = -std::numeric_limits<double>::infinity();
                    size_t best_row = ys * w + xs;
                    for (size_t y = ys; y < ye; ++y) {
                        for (size_t x = xs; x < xe; ++x) {
                            double v = rows.data[(y * w + x) * c + ch];
                            if (v > best) {
                                best = v;
                                best_row = y * w + x;
                            }
                        }
                    }
                    size_t oi = bi * d + (py * pool + px) * c + ch;
                    out.data[oi] = best;
                    argmax[oi] = best_row;
                }
            }
        }
    }

    return g.emit("roi_pool", {map.rows}, std::move(out),
                  [n, d, c, argmax = std::move(argmax)](BackwardCtx& ctx) {
                      auto gout = ctx.out_grad();
                      if (auto dm = ctx.parent_grad(0); !dm.empty()) {
                          for (size_t oi = 0; oi < n * d; ++oi) {
                              size_t ch = oi % c;
                              dm[argmax[oi] * c + ch] += gout[oi];
                          }
                      }
                  });
}

Tensor roi_pool_plain(const FeatureMap& map, std::span<const Box> boxes, size_t pool) {
    Graph g;
    ParamContext ctx(g);
    Var pooled = roi_pool(lift_map(ctx, map), boxes, pool);
    return pooled.value();
}

Var transform_forward(ParamContext& ctx, const TransformNet& net, Var x, double slope) {
    if (net.blocks.empty()) throw ContractError("transform has no blocks");
    Var h = x;
    for (const ResidualBlock& blk : net.blocks) {
        Var inner = blk.l2.forward(ctx, leaky_relu(blk.l1.forward(ctx, h), slope));
        h = net.use_shortcut ? add(inner, h) : inner;
    }
    return h;
}

Var discriminator_forward(ParamContext& ctx, const Discriminator& d, Var x, double slope) {
    Var input = x;
    if (d.paired) {
        // Pair each sample with its cyclic successor so the score can reflect
        // the joint distribution of co-occurring samples.
        const Tensor& X = x.value();
        if (X.rank() != 2) {
            throw ShapeError("paired discriminator expects rank-2 input, got " +
                             shape_str(X.shape));
        }
        size_t n = X.shape[0], k = X.shape[1];
        Graph& g = ctx.graph();
        Tensor paired = Tensor::zeros({n, 2 * k});
        for (size_t i = 0; i < n; ++i) {
            size_t j = (i + 1) % n;
            for (size_t l = 0; l < k; ++l) {
                paired.data[i * 2 * k + l] = X.data[i * k + l];
                paired.data[i * 2 * k + k + l] = X.data[j * k + l];
            }
        }
        input = g.emit("pair_rows", {x}, std::move(paired), [n, k](BackwardCtx& c) {
            auto gout = c.out_grad();
            if (auto dx = c.parent_grad(0); !dx.empty()) {
                for (size_t i = 0; i < n; ++i) {
                    size_t j = (i + 1) % n;
                    for (size_t l = 0; l < k; ++l) {
                        dx[i * k + l] += gout[i * 2 * k + l];
                        dx[j * k + l] += gout[i * 2 * k + k + l];
                    }
                }
            }
        });
    }
    Var h = leaky_relu(d.hidden.forward(ctx, input), slope);
    return sigmoid(d.out.forward(ctx, h));
}

Var relation_scores(ParamContext& ctx, const RelationClassifier& cls, Var subject, Var object,
                    double slope) {
    Var x = concat(subject, object);
    Var h = leaky_relu(cls.h1.forward(ctx, x), slope);
    h = leaky_relu(cls.h2.forward(ctx, h), slope);
    return softmax(matmul(h, ctx.use(cls.w_rel)));
}

}  // namespace sta
