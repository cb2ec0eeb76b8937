#include "remap/backbone/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "remap/common/errors.hpp"
#include "remap/common/hash.hpp"
#include "remap/diff/adam.hpp"
#include "remap/diff/checkpoint.hpp"
#include "remap/diff/ops.hpp"

namespace remap::backbone {

using diff::Parameter;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

std::string provenance_name(Provenance p) {
    return p == Provenance::PretrainedFrozen ? "pretrained-frozen" : "random-frozen";
}

Provenance parse_provenance(const std::string& s) {
    if (s == "pretrained-frozen") return Provenance::PretrainedFrozen;
    if (s == "random-frozen") return Provenance::RandomFrozen;
    throw ConfigError("unknown encoder provenance '" + s + "'");
}

// Pixels centred on zero, one image per row.
Tensor pixel_rows(const std::vector<const Image*>& images) {
    const std::size_t width = images.front()->pixels.size();
    Tensor t = Tensor::matrix(images.size(), width);
    for (std::size_t r = 0; r < images.size(); ++r) {
        const auto& px = images[r]->pixels;
        for (std::size_t i = 0; i < width; ++i) t.values[r * width + i] = px[i] - 0.5;
    }
    return t;
}

void he_init(Parameter& w, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : w.tensor.values) v = n(rng);
}

}  // namespace

int EncoderSpec::map_height() const {
    int h = height;
    for (const auto& s : stages) h = ConvGeometry{h, 1, 1, s.kernel, s.stride, s.channels}.out_h();
    return h;
}

int EncoderSpec::map_width() const {
    int w = width;
    for (const auto& s : stages) w = ConvGeometry{1, w, 1, s.kernel, s.stride, s.channels}.out_w();
    return w;
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& st : s.stages)
        stages.push_back({{"kernel", st.kernel}, {"channels", st.channels}, {"stride", st.stride}});
    j = nlohmann::json{{"height", s.height},
                       {"width", s.width},
                       {"stages", stages},
                       {"scene_width", s.scene_width},
                       {"seed", s.seed},
                       {"provenance", provenance_name(s.provenance)},
                       {"rectified_scene", s.rectified_scene},
                       {"feature_scale", s.feature_scale},
                       {"spatial_scale", s.spatial_scale}};
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
    s = EncoderSpec{};
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    if (j.contains("stages")) {
        s.stages.clear();
        for (const auto& st : j.at("stages"))
            s.stages.push_back({st.at("kernel").get<int>(), st.at("channels").get<int>(),
                                st.at("stride").get<int>()});
    }
    s.scene_width = j.value("scene_width", s.scene_width);
    s.seed = j.value("seed", s.seed);
    s.provenance = parse_provenance(j.value("provenance", std::string("random-frozen")));
    s.rectified_scene = j.value("rectified_scene", true);
    s.feature_scale = j.value("feature_scale", 1.0);
    s.spatial_scale = j.value("spatial_scale", 1.0);
}

// ---- ops ----

Var conv2d(Tape& tape, Var x, Parameter& weight, Parameter& bias, const ConvGeometry& g) {
    const Tensor& in = tape.value(x);
    const std::size_t in_size = static_cast<std::size_t>(g.in_h) * g.in_w * g.in_c;
    const std::size_t patch = static_cast<std::size_t>(g.kernel) * g.kernel * g.in_c;
    if (in.cols() != in_size) {
        throw ConfigError("conv input width " + std::to_string(in.cols()) + " vs geometry " +
                          std::to_string(in_size));
    }
    if (weight.tensor.size() != patch * g.out_c || bias.tensor.size() != static_cast<std::size_t>(g.out_c)) {
        throw ConfigError("conv '" + weight.name + "' parameter shapes do not match geometry");
    }
    const int oh = g.out_h(), ow = g.out_w(), pad = g.pad();
    const std::size_t out_size = static_cast<std::size_t>(oh) * ow * g.out_c;
    const std::size_t batch = in.rows();
    Tensor out = Tensor::matrix(batch, out_size);

    // Visits every (output unit, weight offset, input offset) triple.
    auto for_each_tap = [g, oh, ow, pad, patch](auto&& f) {
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int ky = 0; ky < g.kernel; ++ky) {
                    const int iy = oy * g.stride + ky - pad;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int kx = 0; kx < g.kernel; ++kx) {
                        const int ix = ox * g.stride + kx - pad;
                        if (ix < 0 || ix >= g.in_w) continue;
                        const std::size_t xo = (static_cast<std::size_t>(iy) * g.in_w + ix) * g.in_c;
                        const std::size_t wo = (static_cast<std::size_t>(ky) * g.kernel + kx) * g.in_c;
                        const std::size_t yo = (static_cast<std::size_t>(oy) * ow + ox) * g.out_c;
                        f(yo, wo, xo);
                    }
                }
        (void)patch;
    };

    const double* w = weight.tensor.values.data();
    const double* b = bias.tensor.values.data();
    for (std::size_t n = 0; n < batch; ++n) {
        const double* xr = in.values.data() + n * in_size;
        double* yr = out.values.data() + n * out_size;
        for (std::size_t p = 0; p < static_cast<std::size_t>(oh) * ow; ++p)
            std::copy(b, b + g.out_c, yr + p * g.out_c);
        for_each_tap([&](std::size_t yo, std::size_t wo, std::size_t xo) {
            for (int oc = 0; oc < g.out_c; ++oc) {
                const double* wr = w + oc * patch + wo;
                double acc = 0.0;
                for (int c = 0; c < g.in_c; ++c) acc += wr[c] * xr[xo + c];
                yr[yo + oc] += acc;
            }
        });
    }

    const Var wv = tape.parameter(weight);
    const Var bv = tape.parameter(bias);
    const Var y{tape.size()};
    const bool needs = tape.needs_grad(x) || tape.needs_grad(wv) || tape.needs_grad(bv);
    return tape.push(std::move(out), needs, [=](Tape& t) {
        const Tensor& in = t.value(x);
        const Tensor& wt = t.value(wv);
        const auto& gy = t.grad(y);
        const bool gx_on = t.needs_grad(x);
        std::vector<double>* gx = gx_on ? &t.grad(x) : nullptr;
        auto& gw = t.grad(wv);
        auto& gb = t.grad(bv);
        for (std::size_t n = 0; n < batch; ++n) {
            const double* xr = in.values.data() + n * in_size;
            const double* gyr = gy.data() + n * out_size;
            for (std::size_t p = 0; p < static_cast<std::size_t>(oh) * ow; ++p)
                for (int oc = 0; oc < g.out_c; ++oc) gb[oc] += gyr[p * g.out_c + oc];
            double* gxr = gx_on ? gx->data() + n * in_size : nullptr;
            for_each_tap([&](std::size_t yo, std::size_t wo, std::size_t xo) {
                for (int oc = 0; oc < g.out_c; ++oc) {
                    const double go = gyr[yo + oc];
                    if (go == 0.0) continue;
                    double* gwr = gw.data() + oc * patch + wo;
                    const double* wr = wt.values.data() + oc * patch + wo;
                    for (int c = 0; c < g.in_c; ++c) {
                        gwr[c] += go * xr[xo + c];
                        if (gxr) gxr[xo + c] += go * wr[c];
                    }
                }
            });
        }
    });
}

Var softmax_cross_entropy(Tape& tape, Var logits, const std::vector<int>& labels) {
    const Tensor& z = tape.value(logits);
    const std::size_t rows = z.rows(), cols = z.cols();
    if (labels.size() != rows) throw ConfigError("label count does not match logit rows");
    Tensor probs = Tensor::matrix(rows, cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols) {
            throw InputError("label " + std::to_string(labels[r]) + " outside logit width");
        }
        const auto row = z.row_span(r);
        const double m = *std::max_element(row.begin(), row.end());
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += (probs(r, c) = std::exp(row[c] - m));
        for (std::size_t c = 0; c < cols; ++c) probs(r, c) /= total;
        loss += std::log(total) + m - row[static_cast<std::size_t>(labels[r])];
    }
    loss /= static_cast<double>(rows);
    const Var y{tape.size()};
    return tape.push(Tensor::row({loss}), tape.needs_grad(logits),
                     [=, probs = std::move(probs)](Tape& t) {
                         const double g = t.grad(y)[0] / static_cast<double>(rows);
                         auto& gz = t.grad(logits);
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) {
                                 const double target = static_cast<int>(c) == labels[r] ? 1.0 : 0.0;
                                 gz[r * cols + c] += g * (probs(r, c) - target);
                             }
                     });
}

// ---- Encoder ----

Encoder::Encoder(EncoderSpec spec) : spec_(std::move(spec)) {
    if (spec_.height <= 0 || spec_.width <= 0 || spec_.scene_width <= 0 || spec_.stages.empty()) {
        throw ConfigError("encoder spec needs positive sizes and at least one stage");
    }
    std::mt19937_64 rng(spec_.seed);
    int c = 3;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        const auto& s = spec_.stages[i];
        const std::size_t fan_in = static_cast<std::size_t>(s.kernel) * s.kernel * c;
        Parameter w{"conv" + std::to_string(i) + "/weight",
                    Tensor::matrix(static_cast<std::size_t>(s.channels), fan_in), false};
        he_init(w, fan_in, rng);
        conv_w_.push_back(std::move(w));
        conv_b_.push_back(Parameter{"conv" + std::to_string(i) + "/bias",
                                    Tensor({static_cast<std::size_t>(s.channels)}), false});
        c = s.channels;
    }
    const std::size_t flat = static_cast<std::size_t>(spec_.map_height()) * spec_.map_width() * c;
    fc_w_ = Parameter{"fc/weight", Tensor::matrix(static_cast<std::size_t>(spec_.scene_width), flat), false};
    he_init(fc_w_, flat, rng);
    fc_b_ = Parameter{"fc/bias", Tensor({static_cast<std::size_t>(spec_.scene_width)}), false};
}

Var Encoder::forward_scene(Tape& tape, Var pixels, Var* spatial) {
    Var h = pixels;
    int hh = spec_.height, ww = spec_.width, c = 3;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        const auto& s = spec_.stages[i];
        const ConvGeometry g{hh, ww, c, s.kernel, s.stride, s.channels};
        h = diff::pointwise(tape, "relu", conv2d(tape, h, conv_w_[i], conv_b_[i], g));
        hh = g.out_h();
        ww = g.out_w();
        c = s.channels;
    }
    if (spatial) *spatial = h;
    Var scene = diff::affine(tape, h, fc_w_, fc_b_);
    if (spec_.rectified_scene) scene = diff::pointwise(tape, "relu", scene);
    return scene;
}

Encoding Encoder::encode(const Image& frame) const {
    if (frame.height != spec_.height || frame.width != spec_.width) {
        throw InputError("frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                         " does not match encoder input " + std::to_string(spec_.height) + "x" +
                         std::to_string(spec_.width));
    }
    // The forward pass only reads parameters; a non-recording tape never
    // writes into them.
    auto& self = const_cast<Encoder&>(*this);
    Tape tape(false);
    Var spatial;
    const Var scene = self.forward_scene(tape, tape.constant(pixel_rows({&frame})), &spatial);
    Encoding e;
    e.scene = tape.value(scene).values;
    e.spatial = tape.value(spatial).values;
    for (double& v : e.scene) v *= spec_.feature_scale;
    for (double& v : e.spatial) v *= spec_.spatial_scale;
    return e;
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < conv_w_.size(); ++i) {
        out.push_back(&conv_w_[i]);
        out.push_back(&conv_b_[i]);
    }
    out.push_back(&fc_w_);
    out.push_back(&fc_b_);
    return out;
}

std::vector<const Parameter*> Encoder::parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<Encoder&>(*this).parameters()) out.push_back(p);
    return out;
}

std::uint64_t Encoder::weight_hash() const {
    const auto ps = parameters();
    return diff::parameter_hash(ps);
}

std::string Encoder::weight_hash_hex() const { return to_hex(weight_hash()); }

nlohmann::json Encoder::checkpoint() const {
    const auto ps = parameters();
    return diff::make_checkpoint("encoder", spec_, ps);
}

Encoder Encoder::from_checkpoint(const nlohmann::json& doc) {
    if (doc.value("kind", std::string()) != "encoder") throw InputError("checkpoint is not an encoder");
    Encoder e(doc.at("spec").get<EncoderSpec>());
    const auto ps = e.parameters();
    diff::restore_parameters(doc, ps);
    for (auto* p : ps) p->trainable = false;
    return e;
}

void Encoder::save(const std::filesystem::path& path) const { diff::write_json(path, checkpoint()); }

Encoder Encoder::load(const std::filesystem::path& path) { return from_checkpoint(diff::read_json(path)); }

// ---- pretraining ----

Dataset make_dataset(env::InstanceBank& bank, const std::vector<int>& classes, int per_class,
                     env::Split split) {
    Dataset d;
    const int n = std::min(per_class, bank.pool_size(split));
    for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < classes.size(); ++k) {
            d.images.push_back(bank.instance(classes[k], i, split)->pixels);
            d.labels.push_back(static_cast<int>(k));
        }
    return d;
}

namespace {

struct Head {
    Parameter w, b;
};

std::vector<std::vector<double>> scene_vectors(const Encoder& enc, const Dataset& d) {
    std::vector<std::vector<double>> out;
    out.reserve(d.images.size());
    for (const auto& img : d.images) out.push_back(enc.encode(img).scene);
    return out;
}

double head_accuracy(Encoder& enc, Head& head, const Dataset& d) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < d.images.size(); start += 64) {
        const std::size_t end = std::min(d.images.size(), start + 64);
        std::vector<const Image*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&d.images[i]);
        Tape tape(false);
        const Var logits = diff::affine(tape, enc.forward_scene(tape, tape.constant(pixel_rows(batch))),
                                        head.w, head.b);
        const Tensor& z = tape.value(logits);
        for (std::size_t r = 0; r < z.rows(); ++r) {
            const auto row = z.row_span(r);
            const auto best = std::max_element(row.begin(), row.end()) - row.begin();
            correct += best == d.labels[start + r];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.images.size());
}

}  // namespace

Encoder pretrain(const Dataset& data, EncoderSpec spec, const PretrainConfig& config,
                 PretrainReport* report, const Dataset* held_out) {
    if (data.images.size() != data.labels.size() || data.images.empty()) {
        throw ConfigError("pretraining set is empty or unlabeled");
    }
    const int classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
    if (classes < 2) throw ConfigError("pretraining needs at least two classes");
    if (config.epochs < 0 || config.batch < 1) throw ConfigError("bad pretraining schedule");

    Encoder enc(spec);
    std::mt19937_64 rng(config.seed);
    Head head{{"head/weight", Tensor::matrix(static_cast<std::size_t>(classes),
                                             static_cast<std::size_t>(spec.scene_width)), true},
              {"head/bias", Tensor({static_cast<std::size_t>(classes)}), true}};
    he_init(head.w, static_cast<std::size_t>(spec.scene_width), rng);

    PretrainReport local;
    if (config.epochs > 0) {
        for (auto* p : enc.parameters()) p->trainable = true;
        diff::Adam adam(diff::AdamConfig{config.learning_rate});
        for (auto* p : enc.parameters()) adam.add(*p);
        adam.add(head.w);
        adam.add(head.b);

        std::vector<std::size_t> order(data.images.size());
        std::iota(order.begin(), order.end(), 0);
        for (int epoch = 0; epoch < config.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            double total = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
                std::vector<const Image*> batch;
                std::vector<int> labels;
                for (std::size_t i = start; i < end; ++i) {
                    batch.push_back(&data.images[order[i]]);
                    labels.push_back(data.labels[order[i]]);
                }
                Tape tape;
                const Var scene = enc.forward_scene(tape, tape.constant(pixel_rows(batch)));
                const Var loss = softmax_cross_entropy(tape, diff::affine(tape, scene, head.w, head.b), labels);
                const double value = tape.value(loss).values[0];
                if (!std::isfinite(value)) {
                    throw TrainingError("encoder pretraining diverged in epoch " + std::to_string(epoch));
                }
                tape.backward(loss);
                adam.step();
                total += value;
                ++batches;
            }
            local.epoch_loss.push_back(total / static_cast<double>(batches));
        }
        local.train_accuracy = head_accuracy(enc, head, data);
        if (held_out) local.held_out_accuracy = head_accuracy(enc, head, *held_out);
        for (auto* p : enc.parameters()) p->trainable = false;
    } else if (held_out) {
        local.held_out_accuracy = head_accuracy(enc, head, *held_out);
    }

    // feature scales: unit mean square over the training set
    EncoderSpec final_spec = spec;
    final_spec.provenance = config.epochs > 0 ? Provenance::PretrainedFrozen : Provenance::RandomFrozen;
    final_spec.feature_scale = 1.0;
    final_spec.spatial_scale = 1.0;
    Encoder probe = Encoder::from_checkpoint(diff::make_checkpoint("encoder", final_spec, std::as_const(enc).parameters()));
    double scene_sq = 0.0, spatial_sq = 0.0;
    std::size_t scene_n = 0, spatial_n = 0;
    for (const auto& img : data.images) {
        const auto e = probe.encode(img);
        for (double v : e.scene) scene_sq += v * v;
        for (double v : e.spatial) spatial_sq += v * v;
        scene_n += e.scene.size();
        spatial_n += e.spatial.size();
    }
    final_spec.feature_scale = scene_sq > 0 ? std::sqrt(static_cast<double>(scene_n) / scene_sq) : 1.0;
    final_spec.spatial_scale = spatial_sq > 0 ? std::sqrt(static_cast<double>(spatial_n) / spatial_sq) : 1.0;
    if (report) *report = local;
    return Encoder::from_checkpoint(diff::make_checkpoint("encoder", final_spec, std::as_const(enc).parameters()));
}

double nearest_mean_accuracy(const Encoder& encoder, const Dataset& train, const Dataset& test) {
    const auto tv = scene_vectors(encoder, train);
    const int classes = *std::max_element(train.labels.begin(), train.labels.end()) + 1;
    const std::size_t D = tv.front().size();
    std::vector<std::vector<double>> mean(static_cast<std::size_t>(classes), std::vector<double>(D, 0.0));
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (std::size_t i = 0; i < tv.size(); ++i) {
        const auto k = static_cast<std::size_t>(train.labels[i]);
        for (std::size_t d = 0; d < D; ++d) mean[k][d] += tv[i][d];
        ++count[k];
    }
    for (std::size_t k = 0; k < mean.size(); ++k)
        for (double& v : mean[k]) v /= std::max(1, count[k]);
    std::size_t correct = 0;
    const auto sv = scene_vectors(encoder, test);
    for (std::size_t i = 0; i < sv.size(); ++i) {
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t k = 0; k < mean.size(); ++k) {
            double d = 0.0;
            for (std::size_t j = 0; j < D; ++j) d += (sv[i][j] - mean[k][j]) * (sv[i][j] - mean[k][j]);
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        correct += static_cast<int>(best) == test.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(sv.size());
}

// ---- cache ----

std::shared_ptr<const Encoding> EncodingCache::get(const Image& frame) {
    const std::uint64_t key = frame.content_hash();
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++hits_;
            return it->second;
        }
    }
    auto e = std::make_shared<const Encoding>(encoder_->encode(frame));
    std::lock_guard lock(mutex_);
    return cache_.emplace(key, std::move(e)).first->second;
}

std::size_t EncodingCache::size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

}  // namespace remap::backbone
