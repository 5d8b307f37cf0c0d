#include "umo/targets.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace umo {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int TargetModel::output_dim() const {
    switch (task) {
        case Task::Binary: return 1;
        case Task::Keypoint: return 2 * n_points;
        case Task::Segmentation: return input_dim() * n_classes;
    }
    return 0;
}

ForwardIds TargetModel::forward(Tape& tape, ValueId images, int batch) const {
    const Tensor& x = tape.val(images);
    if (x.rank() != 2 || x.shape[0] != batch || x.shape[1] != input_dim())
        throw std::invalid_argument("predict: input shape " + shape_str(x.shape) + " does not match model input [" +
                                    std::to_string(batch) + "," + std::to_string(input_dim()) + "]");
    ValueId ones = tape.leaf(Tensor::full({batch, 1}, 1.0f));
    ValueId h = tape.tanh_(tape.add(tape.matmul(images, tape.leaf(w1)), tape.matmul(ones, tape.leaf(b1))));
    ValueId z = tape.add(tape.matmul(h, tape.leaf(w2)), tape.matmul(ones, tape.leaf(b2)));
    ForwardIds ids;
    switch (task) {
        case Task::Binary:
            ids.logits = z;
            ids.output = tape.sigmoid(z);
            break;
        case Task::Keypoint:
            ids.logits = z;
            ids.output = tape.sigmoid(z);
            break;
        case Task::Segmentation: {
            ValueId rows = tape.reshape(z, {batch * input_dim(), n_classes});
            ids.logits = rows;
            ids.output = tape.softmax(rows);
            break;
        }
    }
    return ids;
}

Prediction TargetModel::predict(const Tensor& image) const {
    if (image.numel() != input_dim())
        throw std::invalid_argument("predict: image shape " + shape_str(image.shape) + " does not match model input " +
                                    std::to_string(in_h) + "x" + std::to_string(in_w));
    Tape tape;
    ValueId x = tape.leaf(Tensor::matrix(1, input_dim(), image.data));
    ForwardIds ids = forward(tape, x, 1);
    Prediction p;
    p.task = task;
    switch (task) {
        case Task::Binary: p.prob = tape.val(ids.output).data[0]; break;
        case Task::Keypoint: p.keypoints = tape.val(ids.output).data; break;
        case Task::Segmentation: p.pixel_probs = tape.val(ids.output); break;
    }
    return p;
}

TargetModel init_target_model(Task task, const Backend& backend, const LabelRule& rule, const TrainConfig& cfg) {
    if (cfg.lr <= 0.0f || cfg.epochs < 0 || cfg.batch_size <= 0 || cfg.hidden_width <= 0)
        throw std::invalid_argument("train config: values must be positive");
    TargetModel m;
    m.task = task;
    m.in_h = backend.spec().height;
    m.in_w = backend.spec().width;
    m.hidden = cfg.hidden_width;
    m.n_points = rule.n_keypoints;
    m.n_classes = backend.attrs();
    m.seed = cfg.seed;
    const int in = m.input_dim(), out = m.output_dim();
    Rng rng = Rng(cfg.seed).derive("target-init");
    auto init = [&](int rows, int cols, double scale) {
        Tensor t = Tensor::zeros({rows, cols});
        for (auto& v : t.data) v = static_cast<float>(rng.normal() * scale);
        return t;
    };
    m.w1 = init(in, m.hidden, 1.0 / std::sqrt(static_cast<double>(in)));
    m.b1 = Tensor::zeros({1, m.hidden});
    m.w2 = init(m.hidden, out, 1.0 / std::sqrt(static_cast<double>(m.hidden)));
    m.b2 = Tensor::zeros({1, out});
    return m;
}

namespace {

Tensor batch_images(const Backend& backend, const Dataset& ds, const std::vector<int>& idx, int from, int count) {
    const int in = backend.pixels();
    Tensor x = Tensor::zeros({count, in});
    for (int b = 0; b < count; ++b) {
        Tensor img = backend.generate(ds.latents[static_cast<size_t>(idx[static_cast<size_t>(from + b)])]);
        std::copy(img.data.begin(), img.data.end(), x.data.begin() + static_cast<size_t>(b) * in);
    }
    return x;
}

// Task loss against oracle labels for a batch, on the tape.
ValueId batch_loss(Tape& tape, const TargetModel& model, const ForwardIds& ids, const Dataset& ds,
                   const std::vector<int>& idx, int from, int count) {
    switch (model.task) {
        case Task::Binary: {
            Tensor y = Tensor::zeros({count, 1});
            for (int b = 0; b < count; ++b)
                y.data[static_cast<size_t>(b)] =
                    static_cast<float>(ds.labels[static_cast<size_t>(idx[static_cast<size_t>(from + b)])].cls);
            ValueId yid = tape.leaf(y);
            ValueId one_minus_y = tape.sub(tape.leaf(Tensor::scalar(1.0f)), yid);
            ValueId z = ids.logits;
            ValueId bce = tape.add(tape.mul(yid, tape.softplus(tape.scale(z, -1.0f))),
                                   tape.mul(one_minus_y, tape.softplus(z)));
            return tape.mean(bce);
        }
        case Task::Keypoint: {
            const int out = model.output_dim();
            Tensor y = Tensor::zeros({count, out});
            for (int b = 0; b < count; ++b) {
                const auto& kp = ds.labels[static_cast<size_t>(idx[static_cast<size_t>(from + b)])].keypoints;
                std::copy(kp.begin(), kp.end(), y.data.begin() + static_cast<size_t>(b) * out);
            }
            ValueId diff = tape.sub(ids.output, tape.leaf(y));
            return tape.mean(tape.mul(diff, diff));
        }
        case Task::Segmentation: {
            const int hw = model.input_dim(), c = model.n_classes;
            Tensor onehot = Tensor::zeros({count * hw, c});
            for (int b = 0; b < count; ++b) {
                const auto& seg = ds.labels[static_cast<size_t>(idx[static_cast<size_t>(from + b)])].seg;
                for (int p = 0; p < hw; ++p)
                    onehot.data[(static_cast<size_t>(b) * hw + p) * c + seg[static_cast<size_t>(p)]] = 1.0f;
            }
            ValueId picked = tape.sum(tape.mul(tape.log_softmax(ids.logits), tape.leaf(onehot)));
            return tape.scale(picked, -1.0f / static_cast<float>(count * hw));
        }
    }
    throw std::logic_error("unreachable");
}

void seeded_shuffle(std::vector<int>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

double run_epoch(TargetModel& model, const Backend& backend, const Dataset& ds, float lr, int batch_size, Rng& rng,
                 std::vector<int>& idx) {
    seeded_shuffle(idx, rng);
    double loss_acc = 0.0;
    int batches = 0;
    for (int from = 0; from < static_cast<int>(idx.size()); from += batch_size) {
        const int count = std::min(batch_size, static_cast<int>(idx.size()) - from);
        Tape tape;
        ValueId x = tape.leaf(batch_images(backend, ds, idx, from, count));
        ValueId w1 = tape.param(model.w1, 0), b1 = tape.param(model.b1, 1);
        ValueId w2 = tape.param(model.w2, 2), b2 = tape.param(model.b2, 3);
        // Forward with the registered params rather than leaf copies.
        ValueId ones = tape.leaf(Tensor::full({count, 1}, 1.0f));
        ValueId h = tape.tanh_(tape.add(tape.matmul(x, w1), tape.matmul(ones, b1)));
        ValueId z = tape.add(tape.matmul(h, w2), tape.matmul(ones, b2));
        ForwardIds ids;
        if (model.task == Task::Segmentation) {
            ids.logits = tape.reshape(z, {count * model.input_dim(), model.n_classes});
            ids.output = ids.logits;
        } else {
            ids.logits = z;
            ids.output = tape.sigmoid(z);
        }
        ValueId loss = batch_loss(tape, model, ids, ds, idx, from, count);
        loss_acc += tape.scalar_val(loss);
        ++batches;
        auto grads = tape.backward(loss);
        std::vector<ParamRef> refs{{0, &model.w1}, {1, &model.b1}, {2, &model.w2}, {3, &model.b2}};
        sgd_step(refs, grads, lr);
    }
    return batches ? loss_acc / batches : 0.0;
}

}  // namespace

double task_accuracy(const TargetModel& model, const Backend& backend, const Dataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
    double correct = 0.0;
    for (size_t i = 0; i < ds.size(); ++i) {
        Tensor img = backend.generate(ds.latents[i]);
        Prediction p = model.predict(img);
        switch (model.task) {
            case Task::Binary:
                correct += ((p.prob > 0.5f) == (ds.labels[i].cls == 1)) ? 1.0 : 0.0;
                break;
            case Task::Keypoint: {
                const auto& gt = ds.labels[i].keypoints;
                double disp = 0.0;
                const int np = model.n_points;
                for (int k = 0; k < np; ++k) {
                    const double dx = p.keypoints[static_cast<size_t>(2 * k)] - gt[static_cast<size_t>(2 * k)];
                    const double dy = p.keypoints[static_cast<size_t>(2 * k + 1)] - gt[static_cast<size_t>(2 * k + 1)];
                    disp += std::sqrt(dx * dx + dy * dy);
                }
                correct += (disp / np <= 0.05) ? 1.0 : 0.0;
                break;
            }
            case Task::Segmentation: {
                const auto& gt = ds.labels[i].seg;
                const int hw = model.input_dim(), c = model.n_classes;
                int ok = 0;
                for (int p2 = 0; p2 < hw; ++p2) {
                    int best = 0;
                    float bv = p.pixel_probs.data[static_cast<size_t>(p2) * c];
                    for (int j = 1; j < c; ++j) {
                        const float v = p.pixel_probs.data[static_cast<size_t>(p2) * c + j];
                        if (v > bv) {
                            bv = v;
                            best = j;
                        }
                    }
                    if (best == gt[static_cast<size_t>(p2)]) ++ok;
                }
                correct += static_cast<double>(ok) / hw;
                break;
            }
        }
    }
    return correct / static_cast<double>(ds.size());
}

TargetModel train_target(const Backend& backend, const LabelRule& rule, const Dataset& train, const TrainConfig& cfg) {
    if (train.size() == 0) throw std::invalid_argument("train_target: empty dataset");
    TargetModel model = init_target_model(rule.task, backend, rule, cfg);

    Rng val_rng = Rng(cfg.seed).derive("target-val");
    Dataset val = rule.task == Task::Binary ? sample_balanced_dataset(backend, rule, cfg.val_size, val_rng)
                                            : sample_uniform_dataset(backend, rule, cfg.val_size, val_rng);

    Rng rng = Rng(cfg.seed).derive("target-train");
    std::vector<int> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double loss = run_epoch(model, backend, train, cfg.lr, cfg.batch_size, rng, idx);
        const double acc = task_accuracy(model, backend, val);
        model.metrics.epoch_loss.push_back(loss);
        model.metrics.epoch_val_accuracy.push_back(acc);
        model.metrics.epochs_run = epoch + 1;
        model.metrics.final_val_accuracy = acc;
        if (acc >= cfg.early_stop_accuracy) {
            model.metrics.reached_threshold = true;
            break;
        }
    }
    return model;
}

void finetune(TargetModel& model, const Backend& backend, const Dataset& batch, float lr, int epochs, int batch_size,
              uint64_t seed) {
    Rng rng = Rng(seed).derive("finetune");
    std::vector<int> idx(batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int e = 0; e < epochs; ++e) run_epoch(model, backend, batch, lr, batch_size, rng, idx);
}

float pseudo_label_binary(const TargetModel& model, const Tensor& image) {
    if (model.task != Task::Binary) throw std::invalid_argument("pseudo_label_binary: model task is not binary");
    return 1.0f - model.predict(image).prob;
}

SimilarityTransform sample_similarity_transform(Rng& rng) {
    SimilarityTransform t;
    t.tx = static_cast<float>(rng.uniform(-0.2, 0.2));
    t.ty = static_cast<float>(rng.uniform(-0.2, 0.2));
    t.angle_rad = static_cast<float>(rng.uniform(-30.0, 30.0) * 3.14159265358979323846 / 180.0);
    t.scale = static_cast<float>(rng.uniform(0.8, 1.25));
    return t;
}

std::vector<float> pseudo_label_keypoint(const std::vector<float>& gt_keypoints, const SimilarityTransform& t) {
    std::vector<float> out(gt_keypoints.size());
    const float cx = 0.5f, cy = 0.5f;
    const float c = std::cos(t.angle_rad), s = std::sin(t.angle_rad);
    for (size_t i = 0; i + 1 < gt_keypoints.size(); i += 2) {
        const float px = gt_keypoints[i] - cx, py = gt_keypoints[i + 1] - cy;
        const float rx = t.scale * (c * px - s * py);
        const float ry = t.scale * (s * px + c * py);
        out[i] = std::clamp(cx + rx + t.tx, 0.0f, 1.0f);
        out[i + 1] = std::clamp(cy + ry + t.ty, 0.0f, 1.0f);
    }
    return out;
}

std::vector<int> second_argmax_rows(const Tensor& probs) {
    if (probs.rank() != 2 || probs.shape[1] < 2)
        throw std::invalid_argument("second argmax: need >= 2 classes, got shape " + shape_str(probs.shape));
    const int rows = probs.shape[0], c = probs.shape[1];
    std::vector<int> out(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const float* row = &probs.data[static_cast<size_t>(r) * c];
        int first = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[first]) first = j;  // ties keep the lower index
        int second = first == 0 ? 1 : 0;
        for (int j = 0; j < c; ++j) {
            if (j == first) continue;
            if (row[j] >= row[second]) second = j;  // ties take the larger index
        }
        out[static_cast<size_t>(r)] = second;
    }
    return out;
}

std::vector<int> pseudo_label_segmentation(const TargetModel& model, const Tensor& image) {
    if (model.task != Task::Segmentation)
        throw std::invalid_argument("pseudo_label_segmentation: model task is not segmentation");
    return second_argmax_rows(model.predict(image).pixel_probs);
}

void save_checkpoint(const TargetModel& model, const std::string& dir) {
    fs::create_directories(dir);
    ordered_json manifest;
    manifest["task"] = task_name(model.task);
    manifest["input"] = {model.in_h, model.in_w};
    manifest["hidden"] = model.hidden;
    manifest["n_points"] = model.n_points;
    manifest["n_classes"] = model.n_classes;
    manifest["seed"] = model.seed;
    manifest["metrics"] = {{"final_val_accuracy", model.metrics.final_val_accuracy},
                           {"epochs_run", model.metrics.epochs_run},
                           {"reached_threshold", model.metrics.reached_threshold},
                           {"epoch_loss", model.metrics.epoch_loss},
                           {"epoch_val_accuracy", model.metrics.epoch_val_accuracy}};
    manifest["weights"] = {{"w1", "w1.umot"}, {"b1", "b1.umot"}, {"w2", "w2.umot"}, {"b2", "b2.umot"}};
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
    save_umot(model.w1, (fs::path(dir) / "w1.umot").string());
    save_umot(model.b1, (fs::path(dir) / "b1.umot").string());
    save_umot(model.w2, (fs::path(dir) / "w2.umot").string());
    save_umot(model.b2, (fs::path(dir) / "b2.umot").string());
}

TargetModel load_checkpoint(const std::string& dir) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + mpath.string());
    ordered_json manifest = ordered_json::parse(in, nullptr, true);
    TargetModel m;
    m.task = task_from(manifest.at("task").get<std::string>());
    m.in_h = manifest.at("input").at(0).get<int>();
    m.in_w = manifest.at("input").at(1).get<int>();
    m.hidden = manifest.at("hidden").get<int>();
    m.n_points = manifest.at("n_points").get<int>();
    m.n_classes = manifest.at("n_classes").get<int>();
    m.seed = manifest.at("seed").get<uint64_t>();
    const auto& met = manifest.at("metrics");
    m.metrics.final_val_accuracy = met.at("final_val_accuracy").get<double>();
    m.metrics.epochs_run = met.at("epochs_run").get<int>();
    m.metrics.reached_threshold = met.at("reached_threshold").get<bool>();
    m.w1 = load_umot((fs::path(dir) / "w1.umot").string());
    m.b1 = load_umot((fs::path(dir) / "b1.umot").string());
    m.w2 = load_umot((fs::path(dir) / "w2.umot").string());
    m.b2 = load_umot((fs::path(dir) / "b2.umot").string());
    if (m.w1.shape != std::vector<int>{m.input_dim(), m.hidden})
        throw std::runtime_error("checkpoint: w1 shape " + shape_str(m.w1.shape) + " does not match manifest");
    if (m.w2.shape != std::vector<int>{m.hidden, m.output_dim()})
        throw std::runtime_error("checkpoint: w2 shape " + shape_str(m.w2.shape) + " does not match manifest");
    return m;
}

}  // namespace umo
