#include "ttv/snn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

namespace ttv::snn {

std::vector<float> encode_target(int x, int y) {
    if (x < 0 || x > 127 || y < 0 || y > 127) throw OutOfRange();
    std::vector<float> t(256, 0.0f);
    t[x] = 1.0f;
    if (x > 0) t[x - 1] = 0.5f;
    if (x < 127) t[x + 1] = 0.5f;
    t[128 + y] = 1.0f;
    if (y > 0) t[128 + y - 1] = 0.5f;
    if (y < 127) t[128 + y + 1] = 0.5f;
    return t;
}

Detection decode(const std::vector<float>& rates) {
    if (rates.size() != 256) throw ShapeMismatch("decode expects 256 rates");
    Detection d;
    float bx = rates[0], by = rates[128];
    for (int i = 1; i < 128; ++i)
        if (rates[i] > bx) {
            bx = rates[i];
            d.x = i;
        }
    for (int i = 1; i < 128; ++i)
        if (rates[128 + i] > by) {
            by = rates[128 + i];
            d.y = i;
        }
    d.confidence = 0.5 * (bx + by);
    return d;
}

double loss_mse(const std::vector<float>& rates, const std::vector<float>& target) {
    if (rates.size() != target.size()) throw ShapeMismatch("loss_mse size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < rates.size(); ++i) {
        double d = static_cast<double>(rates[i]) - target[i];
        s += d * d;
    }
    return s / static_cast<double>(rates.size());
}

SpikeInput spike_input_from_frames(const SpikeFrameSequence& frames) {
    SpikeInput in;
    in.time_steps = frames.time_steps;
    in.steps.resize(frames.time_steps);
    for (int t = 0; t < frames.time_steps; ++t) in.steps[t] = frames.active_cells(t);
    return in;
}

std::pair<std::vector<float>, SynOpsReport> forward_rates(const Network& net,
                                                          const SpikeInput& input) {
    auto tr = net.forward(input, false, false);
    return {tr.rates, tr.synops};
}

namespace {

// d(loss)/d(rates) for one sample. Returns the loss value.
double loss_and_gradient(LossKind kind, const std::vector<float>& rates, int lx, int ly,
                         std::vector<float>& drates) {
    drates.assign(256, 0.0f);
    if (kind == LossKind::mse) {
        auto target = encode_target(lx, ly);
        double loss = 0.0;
        for (int i = 0; i < 256; ++i) {
            double d = static_cast<double>(rates[i]) - target[i];
            loss += d * d;
            drates[i] = static_cast<float>(2.0 * d / 256.0);
        }
        return loss / 256.0;
    }
    // Cross entropy: independent softmax over each 128-class half.
    double loss = 0.0;
    for (int half = 0; half < 2; ++half) {
        int base = half * 128;
        int label = half == 0 ? lx : ly;
        float mx = rates[base];
        for (int i = 1; i < 128; ++i) mx = std::max(mx, rates[base + i]);
        double denom = 0.0;
        for (int i = 0; i < 128; ++i) denom += std::exp(static_cast<double>(rates[base + i]) - mx);
        for (int i = 0; i < 128; ++i) {
            double p = std::exp(static_cast<double>(rates[base + i]) - mx) / denom;
            drates[base + i] = static_cast<float>(p - (i == label ? 1.0 : 0.0));
        }
        double p_label = std::exp(static_cast<double>(rates[base + label]) - mx) / denom;
        loss += -std::log(std::max(p_label, 1e-300));
    }
    return loss;
}

struct Adam {
    double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::vector<std::vector<float>> m, v;

    void init(const std::vector<std::vector<float>*>& blocks) {
        m.resize(blocks.size());
        v.resize(blocks.size());
        for (size_t b = 0; b < blocks.size(); ++b) {
            m[b].assign(blocks[b]->size(), 0.0f);
            v[b].assign(blocks[b]->size(), 0.0f);
        }
    }

    void update(std::vector<std::vector<float>*> params, std::vector<std::vector<float>*> grads) {
        ++step;
        double bc1 = 1.0 - std::pow(beta1, step);
        double bc2 = 1.0 - std::pow(beta2, step);
        for (size_t b = 0; b < params.size(); ++b) {
            auto& p = *params[b];
            const auto& g = *grads[b];
            for (size_t i = 0; i < p.size(); ++i) {
                m[b][i] = static_cast<float>(beta1 * m[b][i] + (1.0 - beta1) * g[i]);
                v[b][i] = static_cast<float>(beta2 * v[b][i] + (1.0 - beta2) * g[i] * g[i]);
                double mhat = m[b][i] / bc1;
                double vhat = v[b][i] / bc2;
                p[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

struct BatchResult {
    Network::Grads grads;
    double loss_sum = 0.0;
    double px_sum = 0.0;
    std::array<double, 4> spikes{};
    double synops = 0.0;
    int count = 0;
};

// Forward+backward over samples [begin, end) of the batch order.
void run_chunk(const Network& net, const Dataset& data, const std::vector<int>& order,
               size_t begin, size_t end, LossKind loss, BatchResult& out) {
    out.grads.init_like(net);
    std::vector<float> drates;
    for (size_t k = begin; k < end; ++k) {
        const Sample& s = data.samples[order[k]];
        auto tr = net.forward(s.input, true, false);
        out.loss_sum += loss_and_gradient(loss, tr.rates, s.label_x, s.label_y, drates);
        auto det = decode(tr.rates);
        out.px_sum += std::hypot(static_cast<double>(det.x - s.label_x),
                                 static_cast<double>(det.y - s.label_y));
        for (int l = 0; l < 4; ++l) out.spikes[l] += static_cast<double>(tr.spikes[l]);
        out.synops += static_cast<double>(tr.synops.total);
        net.backward(s.input, tr, drates, out.grads);
        ++out.count;
    }
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

TrainLog train(Network& net, const Dataset& data, const TrainOptions& opts) {
    if (data.samples.empty()) throw EmptyDataset();
    for (const auto& s : data.samples)
        if (s.input.time_steps != net.config().time_steps)
            throw ShapeMismatch("sample time steps do not match the network");

    const int threads = resolve_threads(opts.threads);
    const int batch = std::max(1, opts.batch_size);

    Adam adam;
    adam.lr = opts.learning_rate;
    adam.init(net.parameter_blocks());

    std::vector<int> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(opts.shuffle_seed);

    TrainLog log;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochStats stats;
        stats.epoch = epoch;
        double n_seen = 0.0;

        for (size_t start = 0; start < order.size(); start += batch) {
            size_t stop = std::min(order.size(), start + batch);
            size_t count = stop - start;

            int nt = static_cast<int>(std::min<size_t>(threads, count));
            std::vector<BatchResult> results(nt);
            std::vector<std::thread> pool;
            for (int w = 0; w < nt; ++w) {
                size_t b = start + count * w / nt;
                size_t e = start + count * (w + 1) / nt;
                pool.emplace_back(run_chunk, std::cref(net), std::cref(data), std::cref(order), b,
                                  e, opts.loss, std::ref(results[w]));
            }
            for (auto& th : pool) th.join();

            // Fixed-order reduction keeps the update deterministic.
            Network::Grads total = std::move(results[0].grads);
            for (int w = 1; w < nt; ++w) total.add(results[w].grads);
            float inv = 1.0f / static_cast<float>(count);
            for (auto* blk : total.blocks())
                for (auto& v : *blk) v *= inv;

            auto params = net.parameter_blocks();
            adam.update(params, total.blocks());
            net.rebuild_transposed();

            for (const auto& r : results) {
                stats.loss += r.loss_sum;
                stats.px_error += r.px_sum;
                for (int l = 0; l < 4; ++l) stats.spikes_per_layer[l] += r.spikes[l];
                stats.synops += r.synops;
                n_seen += r.count;
            }
        }

        stats.loss /= n_seen;
        stats.px_error /= n_seen;
        for (auto& v : stats.spikes_per_layer) v /= n_seen;
        stats.synops /= n_seen;
        if (!std::isfinite(stats.loss)) throw DivergedLoss();
        log.epochs.push_back(stats);
    }
    return log;
}

EvalResult evaluate(const Network& net, const Dataset& data, int threads) {
    if (data.samples.empty()) throw EmptyDataset();
    const int nt = std::min<int>(resolve_threads(threads), static_cast<int>(data.samples.size()));

    std::vector<double> px(data.samples.size());
    std::vector<double> synops(data.samples.size());
    std::vector<std::array<double, 4>> spikes(data.samples.size());
    auto worker = [&](size_t b, size_t e) {
        for (size_t i = b; i < e; ++i) {
            const Sample& s = data.samples[i];
            auto tr = net.forward(s.input, false, false);
            auto det = decode(tr.rates);
            px[i] = std::hypot(static_cast<double>(det.x - s.label_x),
                               static_cast<double>(det.y - s.label_y));
            synops[i] = static_cast<double>(tr.synops.total);
            for (int l = 0; l < 4; ++l) spikes[i][l] = static_cast<double>(tr.spikes[l]);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < nt; ++w) {
        size_t b = data.samples.size() * w / nt;
        size_t e = data.samples.size() * (w + 1) / nt;
        pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();

    EvalResult r;
    r.count = data.samples.size();
    for (size_t i = 0; i < px.size(); ++i) {
        r.mean_px_error += px[i];
        r.mean_synops += synops[i];
        for (int l = 0; l < 4; ++l) r.mean_spikes[l] += spikes[i][l];
    }
    r.mean_px_error /= r.count;
    r.mean_synops /= r.count;
    for (auto& v : r.mean_spikes) v /= r.count;
    double var = 0.0;
    for (double v : px) var += (v - r.mean_px_error) * (v - r.mean_px_error);
    r.std_px_error = r.count > 1 ? std::sqrt(var / (r.count - 1)) : 0.0;
    return r;
}

EvalResult evaluate_ensemble(const std::vector<const Network*>& nets, const Dataset& data,
                             int threads) {
    if (nets.empty()) throw EmptyDataset();
    std::vector<EvalResult> per;
    for (const auto* n : nets) per.push_back(evaluate(*n, data, threads));
    EvalResult r;
    r.count = data.samples.size() * nets.size();
    for (const auto& p : per) {
        r.mean_px_error += p.mean_px_error;
        r.mean_synops += p.mean_synops;
        for (int l = 0; l < 4; ++l) r.mean_spikes[l] += p.mean_spikes[l];
    }
    r.mean_px_error /= per.size();
    r.mean_synops /= per.size();
    for (auto& v : r.mean_spikes) v /= per.size();
    double var = 0.0;
    for (const auto& p : per) var += (p.mean_px_error - r.mean_px_error) * (p.mean_px_error - r.mean_px_error);
    r.std_px_error = per.size() > 1 ? std::sqrt(var / (per.size() - 1)) : 0.0;
    return r;
}

CompareReport compare_loss_activity(const NetworkConfig& config, const Dataset& train_data,
                                    const Dataset& eval_data, const TrainOptions& base) {
    CompareReport rep;

    Network net_mse(config);
    TrainOptions o = base;
    o.loss = LossKind::mse;
    auto log_mse = train(net_mse, train_data, o);
    rep.mse_final_loss = log_mse.epochs.back().loss;
    rep.mse_eval = evaluate(net_mse, eval_data, base.threads);

    Network net_ce(config);  // same seed, same initial weights
    o.loss = LossKind::cross_entropy;
    auto log_ce = train(net_ce, train_data, o);
    rep.ce_final_loss = log_ce.epochs.back().loss;
    rep.ce_eval = evaluate(net_ce, eval_data, base.threads);

    rep.synops_ratio_ce_over_mse =
        rep.ce_eval.mean_synops / std::max(rep.mse_eval.mean_synops, 1e-12);
    rep.reproduced = rep.synops_ratio_ce_over_mse > 1.0;
    return rep;
}

// ------------------------------------------------------------------- file io

namespace {

constexpr uint32_t kWeightsVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void write_f32(std::ofstream& f, float v) { f.write(reinterpret_cast<const char*>(&v), 4); }
uint32_t read_u32(std::ifstream& f) {
    uint32_t v;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t read_u64(std::ifstream& f) {
    uint64_t v;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
float read_f32(std::ifstream& f) {
    float v;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void save_weights(const Network& net, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    const auto& c = net.config();
    f.write("SNNW", 4);
    write_u32(f, kWeightsVersion);
    for (int v : {c.in_channels, c.in_h, c.in_w, c.conv1.out_channels, c.conv1.kernel,
                  c.conv1.stride, c.conv2.out_channels, c.conv2.kernel, c.conv2.stride, c.hidden,
                  c.outputs, c.time_steps})
        write_u32(f, static_cast<uint32_t>(v));
    write_f32(f, c.threshold);
    write_f32(f, c.surrogate_beta);
    write_u64(f, c.seed);

    auto blocks = net.parameter_blocks();
    // fc weights are held transposed in memory; serialize canonical [out][in].
    auto write_block = [&](const std::vector<float>& w) {
        write_u32(f, static_cast<uint32_t>(w.size()));
        f.write(reinterpret_cast<const char*>(w.data()), w.size() * sizeof(float));
    };
    auto write_fc_transposed = [&](const std::vector<float>& w, int in, int out) {
        write_u32(f, static_cast<uint32_t>(w.size()));
        std::vector<float> canon(w.size());
        for (int i = 0; i < in; ++i)
            for (int j = 0; j < out; ++j)
                canon[static_cast<size_t>(j) * in + i] = w[static_cast<size_t>(i) * out + j];
        f.write(reinterpret_cast<const char*>(canon.data()), canon.size() * sizeof(float));
    };
    write_block(*blocks[0]);
    write_block(*blocks[1]);
    write_block(*blocks[2]);
    write_block(*blocks[3]);
    write_fc_transposed(*blocks[4], net.conv2_size(), c.hidden);
    write_block(*blocks[5]);
    write_fc_transposed(*blocks[6], c.hidden, c.outputs);
    write_block(*blocks[7]);
}

Network load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[4];
    f.read(magic, 4);
    if (std::memcmp(magic, "SNNW", 4) != 0) throw std::runtime_error("bad weights magic");
    if (read_u32(f) != kWeightsVersion) throw std::runtime_error("unsupported weights version");
    NetworkConfig c;
    c.in_channels = static_cast<int>(read_u32(f));
    c.in_h = static_cast<int>(read_u32(f));
    c.in_w = static_cast<int>(read_u32(f));
    c.conv1.out_channels = static_cast<int>(read_u32(f));
    c.conv1.kernel = static_cast<int>(read_u32(f));
    c.conv1.stride = static_cast<int>(read_u32(f));
    c.conv2.out_channels = static_cast<int>(read_u32(f));
    c.conv2.kernel = static_cast<int>(read_u32(f));
    c.conv2.stride = static_cast<int>(read_u32(f));
    c.hidden = static_cast<int>(read_u32(f));
    c.outputs = static_cast<int>(read_u32(f));
    c.time_steps = static_cast<int>(read_u32(f));
    c.threshold = read_f32(f);
    c.surrogate_beta = read_f32(f);
    c.seed = read_u64(f);

    Network net(c);
    auto blocks = net.parameter_blocks();
    auto read_block = [&](std::vector<float>& w) {
        uint32_t n = read_u32(f);
        if (n != w.size()) throw std::runtime_error("weights block size mismatch");
        f.read(reinterpret_cast<char*>(w.data()), w.size() * sizeof(float));
    };
    auto read_fc_transposed = [&](std::vector<float>& w, int in, int out) {
        uint32_t n = read_u32(f);
        if (n != w.size()) throw std::runtime_error("weights block size mismatch");
        std::vector<float> canon(w.size());
        f.read(reinterpret_cast<char*>(canon.data()), canon.size() * sizeof(float));
        for (int i = 0; i < in; ++i)
            for (int j = 0; j < out; ++j)
                w[static_cast<size_t>(i) * out + j] = canon[static_cast<size_t>(j) * in + i];
    };
    read_block(*blocks[0]);
    read_block(*blocks[1]);
    read_block(*blocks[2]);
    read_block(*blocks[3]);
    read_fc_transposed(*blocks[4], net.conv2_size(), c.hidden);
    read_block(*blocks[5]);
    read_fc_transposed(*blocks[6], c.hidden, c.outputs);
    read_block(*blocks[7]);
    if (!f) throw std::runtime_error("truncated weights file " + path);
    net.rebuild_transposed();
    return net;
}

void save_train_log_csv(const TrainLog& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "epoch,loss,px_error,spikes_l1,spikes_l2,spikes_l3,spikes_l4,synops\n";
    char line[512];
    for (const auto& e : log.epochs) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch,
                      e.loss, e.px_error, e.spikes_per_layer[0], e.spikes_per_layer[1],
                      e.spikes_per_layer[2], e.spikes_per_layer[3], e.synops);
        f << line;
    }
}

}  // namespace ttv::snn
