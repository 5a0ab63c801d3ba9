#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hclff/augment.hpp"
#include "hclff/checkpoint.hpp"
#include "hclff/config.hpp"
#include "hclff/data.hpp"
#include "hclff/hierarchy.hpp"
#include "hclff/inference.hpp"
#include "hclff/layers.hpp"

namespace hclff {

struct pipeline_error : std::runtime_error {
    int layer_index;
    pipeline_error(int layer, const std::string& msg)
        : std::runtime_error("pipeline stage " + std::to_string(layer) + ": " + msg), layer_index(layer) {}
};

// ---------------------------------------------------------------------------
// Bounded FIFO queue for pipeline stages. abort() wakes every waiter and
// poisons further operations so a failing stage tears the whole pipeline down.
// ---------------------------------------------------------------------------

struct queue_aborted : std::runtime_error {
    queue_aborted() : std::runtime_error("pipeline queue aborted") {}
};

template <class T>
class BoundedQueue {
  public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ < 1) throw argument_error("queue capacity must be >= 1");
    }

    void push(T&& item) {
        std::unique_lock<std::mutex> lock(mu_);
        cv_space_.wait(lock, [&] { return aborted_ || items_.size() < capacity_; });
        if (aborted_) throw queue_aborted();
        items_.push_back(std::move(item));
        cv_items_.notify_one();
    }

    T pop() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_items_.wait(lock, [&] { return aborted_ || !items_.empty(); });
        if (aborted_) throw queue_aborted();
        T item = std::move(items_.front());
        items_.pop_front();
        cv_space_.notify_one();
        return item;
    }

    void abort() {
        std::lock_guard<std::mutex> lock(mu_);
        aborted_ = true;
        cv_items_.notify_all();
        cv_space_.notify_all();
    }

  private:
    std::mutex mu_;
    std::condition_variable cv_items_, cv_space_;
    std::deque<T> items_;
    std::size_t capacity_;
    bool aborted_ = false;
};

// ---------------------------------------------------------------------------
// Per-epoch metrics, long-form CSV (`epoch,item,layer,value`).
// ---------------------------------------------------------------------------

struct MetricsRecord {
    int epoch = 0;
    std::vector<double> hier, con, total, train_acc;  // per layer
    std::vector<double> val_fine;                     // per layer; empty when not measured
    double val_sip_acc = -1;                          // < 0 when not measured
    int sip_s = -1, sip_e = -1;
    double lr = 0, tau = 0, seconds = 0;
};

inline void write_metrics_header(std::ostream& os) { os << "epoch,item,layer,value\n"; }

inline void append_metrics(std::ostream& os, const MetricsRecord& rec) {
    os.precision(10);
    os << rec.epoch << ",lr,," << rec.lr << "\n";
    os << rec.epoch << ",tau,," << rec.tau << "\n";
    os << rec.epoch << ",seconds,," << rec.seconds << "\n";
    for (std::size_t l = 0; l < rec.hier.size(); ++l) {
        os << rec.epoch << ",hier," << l << "," << rec.hier[l] << "\n";
        os << rec.epoch << ",con," << l << "," << rec.con[l] << "\n";
        os << rec.epoch << ",total," << l << "," << rec.total[l] << "\n";
        os << rec.epoch << ",train_acc," << l << "," << rec.train_acc[l] << "\n";
    }
    for (std::size_t l = 0; l < rec.val_fine.size(); ++l)
        os << rec.epoch << ",val_fine," << l << "," << rec.val_fine[l] << "\n";
    if (rec.val_sip_acc >= 0) {
        os << rec.epoch << ",val_sip_acc,," << rec.val_sip_acc << "\n";
        os << rec.epoch << ",sip_s,," << rec.sip_s << "\n";
        os << rec.epoch << ",sip_e,," << rec.sip_e << "\n";
    }
}

// Shared comma-splitting reader used by the metrics and evaluation CSVs.
inline std::vector<std::vector<std::string>> read_csv(std::istream& is) {
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> row;
        std::string tok;
        std::istringstream ls(line);
        while (std::getline(ls, tok, ',')) row.push_back(tok);
        if (!line.empty() && line.back() == ',') row.push_back("");
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Batch material and the per-layer stage step shared by both run modes.
// ---------------------------------------------------------------------------

template <class R>
struct BatchMsg {
    std::size_t batch_index = 0;
    std::vector<int> labels;
    std::vector<FlowState<R>> flows;
};

struct TrainOptions {
    double lambda = 1.0;
    AugmentConfig aug;
    int batch_size = 128;
    uint64_t seed = 1;
    int threads = 1;        // intra-batch parallelism (sequential mode)
    int queue_capacity = 2;  // pipeline mode
    SupconReduction supcon_reduction = SupconReduction::Sum;
};

// Epoch-seeded shuffle of the training indices; fixed Fisher-Yates so every
// mode and resume sees the same order.
inline std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train_idx, uint64_t seed, int epoch) {
    std::vector<std::size_t> order = train_idx;
    rng::Stream srng(rng::mix(seed, static_cast<uint64_t>(epoch), 0x0d8a));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[srng.uniform_int(i)]);
    return order;
}

// Augmentation streams are keyed by (seed, epoch, dataset index), so the
// transform for a given sample never depends on batch order or thread count.
template <class R>
BatchMsg<R> make_batch(const Dataset<R>& data, const std::vector<std::size_t>& order, std::size_t start,
                       std::size_t stop, std::size_t batch_index, const TrainOptions& opt, int epoch) {
    BatchMsg<R> msg;
    msg.batch_index = batch_index;
    msg.labels.reserve(stop - start);
    msg.flows.resize(stop - start);
    for (std::size_t p = start; p < stop; ++p) {
        const std::size_t idx = order[p];
        msg.labels.push_back(data.labels[idx]);
        Tensor<R> img = data.image(idx);
        if (opt.aug.family != AugmentFamily::None) {
            rng::Stream arng(rng::mix(opt.seed ^ 0xa46u, static_cast<uint64_t>(epoch), idx));
            img = augment(img, opt.aug, arng);
        }
        msg.flows[p - start].input = std::move(img);
    }
    return msg;
}

struct StageStats {
    double hier = 0, con = 0, total = 0;
    std::size_t correct = 0, samples = 0;
};

template <class R>
void stage_step(LayerState<R>& layer, const NetworkSpec& spec, const SuperClassPartition& partition,
                BatchMsg<R>& msg, const TrainOptions& opt, double tau, double lr, int threads,
                StageStats& stats) {
    const std::size_t n = msg.flows.size();
    std::vector<Tensor<R>> inputs;
    inputs.reserve(n);
    for (auto& fs : msg.flows) inputs.push_back(std::move(fs.input));
    LocalUpdateResult<R> res = cw_conv_local_update(layer, inputs, msg.labels, partition, opt.lambda, tau, lr,
                                                    spec.goodness_mode, threads, opt.supcon_reduction);
    const std::size_t k = static_cast<std::size_t>(spec.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        if (argmax_lowest(&res.goodness.data[i * k], k) == msg.labels[i]) ++stats.correct;
        advance_flow(spec, layer.layer_index, std::move(res.features[i]), msg.flows[i]);
    }
    stats.hier += res.hier_loss * static_cast<double>(n);
    stats.con += res.con_loss * static_cast<double>(n);
    stats.total += res.total_loss * static_cast<double>(n);
    stats.samples += n;
}

namespace detail {

inline MetricsRecord finish_record(std::vector<StageStats>& stats, int epoch, double lr, double tau) {
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.tau = tau;
    for (const auto& s : stats) {
        const double inv = s.samples ? 1.0 / static_cast<double>(s.samples) : 0.0;
        rec.hier.push_back(s.hier * inv);
        rec.con.push_back(s.con * inv);
        rec.total.push_back(s.total * inv);
        rec.train_acc.push_back(static_cast<double>(s.correct) * inv);
    }
    return rec;
}

template <class R>
const SuperClassPartition& partition_for(const std::vector<SuperClassPartition>& levels, const LayerState<R>& layer) {
    const int lv = layer.hierarchy_level;
    if (lv < 1 || static_cast<std::size_t>(lv) > levels.size())
        throw config_error("layer " + std::to_string(layer.layer_index) + " assigned level " + std::to_string(lv) +
                           " but hierarchy has " + std::to_string(levels.size()) + " levels");
    return levels[static_cast<std::size_t>(lv - 1)];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One epoch, batch by batch through the layers in order.
// ---------------------------------------------------------------------------

template <class R>
MetricsRecord train_epoch_sequential(Network<R>& net, const Dataset<R>& data,
                                     const std::vector<std::size_t>& train_idx,
                                     const std::vector<SuperClassPartition>& levels, const ScheduleConfig& sched,
                                     int epoch, const TrainOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, sched);
    const double tau = tau_schedule(epoch, sched);
    const std::vector<std::size_t> order = epoch_order(train_idx, opt.seed, epoch);
    std::vector<StageStats> stats(net.layers.size());

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
        BatchMsg<R> msg = make_batch(data, order, start, stop, batch_index++, opt, epoch);
        for (std::size_t l = 0; l < net.layers.size(); ++l)
            stage_step(net.layers[l], net.spec, detail::partition_for(levels, net.layers[l]), msg, opt, tau, lr,
                       opt.threads, stats[l]);
    }

    MetricsRecord rec = detail::finish_record(stats, epoch, lr, tau);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// ---------------------------------------------------------------------------
// Same epoch as a pipeline: one stage thread per layer, linked by bounded
// FIFO queues. Stages update on batches in arrival order and forward features
// computed with pre-update weights, so the resulting parameters are
// bit-identical to the sequential schedule for any queue capacity.
// ---------------------------------------------------------------------------

template <class R>
MetricsRecord train_epoch_pipeline(Network<R>& net, const Dataset<R>& data,
                                   const std::vector<std::size_t>& train_idx,
                                   const std::vector<SuperClassPartition>& levels, const ScheduleConfig& sched,
                                   int epoch, const TrainOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, sched);
    const double tau = tau_schedule(epoch, sched);
    const std::vector<std::size_t> order = epoch_order(train_idx, opt.seed, epoch);
    const std::size_t num_layers = net.layers.size();
    const std::size_t num_batches =
        (order.size() + static_cast<std::size_t>(opt.batch_size) - 1) / static_cast<std::size_t>(opt.batch_size);
    std::vector<StageStats> stats(num_layers);

    std::vector<std::unique_ptr<BoundedQueue<BatchMsg<R>>>> queues;
    for (std::size_t l = 0; l < num_layers; ++l)
        queues.push_back(std::make_unique<BoundedQueue<BatchMsg<R>>>(static_cast<std::size_t>(opt.queue_capacity)));

    std::mutex err_mu;
    int err_layer = -1;
    std::string err_msg;
    auto fail = [&](int layer, const std::string& msg) {
        {
            std::lock_guard<std::mutex> lock(err_mu);
            if (err_layer < 0) {
                err_layer = layer;
                err_msg = msg;
            }
        }
        for (auto& q : queues) q->abort();
    };

    std::vector<std::thread> workers;
    // source: assembles batches (including augmentation) in batch order
    workers.emplace_back([&] {
        try {
            std::size_t batch_index = 0;
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
                const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
                queues[0]->push(make_batch(data, order, start, stop, batch_index++, opt, epoch));
            }
        } catch (const queue_aborted&) {
        } catch (const std::exception& e) {
            fail(-1, std::string("batch source: ") + e.what());
        }
    });

    for (std::size_t l = 0; l < num_layers; ++l) {
        workers.emplace_back([&, l] {
            try {
                const SuperClassPartition& partition = detail::partition_for(levels, net.layers[l]);
                for (std::size_t b = 0; b < num_batches; ++b) {
                    BatchMsg<R> msg = queues[l]->pop();
                    stage_step(net.layers[l], net.spec, partition, msg, opt, tau, lr, 1, stats[l]);
                    if (l + 1 < num_layers) queues[l + 1]->push(std::move(msg));
                }
            } catch (const queue_aborted&) {
            } catch (const std::exception& e) {
                fail(static_cast<int>(l), e.what());
            }
        });
    }
    for (auto& t : workers) t.join();
    if (err_layer >= 0 || !err_msg.empty()) throw pipeline_error(err_layer, err_msg);

    MetricsRecord rec = detail::finish_record(stats, epoch, lr, tau);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

// ---------------------------------------------------------------------------
// Whole-dataset forward pass: traces plus pooled final-layer features.
// ---------------------------------------------------------------------------

template <class R>
struct EvalForward {
    std::vector<Tensor<R>> traces;  // [L,K] per sample
    Tensor<R> features;             // [N, C_last] decoupled
    Tensor<R> features_prenorm;     // [N, C_last] pre-normalization
    std::vector<int> labels;
};

template <class R>
EvalForward<R> forward_dataset(const Network<R>& net, const Dataset<R>& data,
                               const std::vector<std::size_t>& indices, int threads) {
    EvalForward<R> out;
    const std::size_t n = indices.size();
    const std::size_t c_last = static_cast<std::size_t>(net.spec.layer_out_channels(net.spec.layer_count() - 1));
    out.traces.resize(n);
    out.features = Tensor<R>({n, c_last});
    out.features_prenorm = Tensor<R>({n, c_last});
    out.labels.resize(n);
    parallel_for(
        n,
        [&](std::size_t i) {
            NetworkForward<R> fwd = forward_network(net, data.image(indices[i]));
            out.traces[i] = std::move(fwd.trace);
            for (std::size_t j = 0; j < c_last; ++j) {
                out.features.at(i, j) = fwd.final_features[j];
                out.features_prenorm.at(i, j) = fwd.final_prenorm[j];
            }
            out.labels[i] = data.labels[indices[i]];
        },
        threads);
    return out;
}

}  // namespace hclff
