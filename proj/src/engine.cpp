#include "stalesgd/engine.hpp"

#include "stalesgd/errors.hpp"
#include "stalesgd/kernels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <queue>

namespace stalesgd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Recorder {
    RunTrace trace;
    const RunConfig* cfg;
    std::optional<std::vector<double>> x_star;
    std::vector<double> prev_x;  // for increments
    std::chrono::steady_clock::time_point t0;

    Recorder(const RunConfig& c, std::size_t dim, const std::vector<double>& x0,
             std::optional<std::vector<double>> x_star_opt)
        : cfg(&c), x_star(std::move(x_star_opt)), t0(std::chrono::steady_clock::now()) {
        trace.mode = c.mode;
        trace.dim = dim;
        trace.x0 = x0;
        if (c.record_increments) {
            prev_x = x0;
            trace.increments.reserve(static_cast<std::size_t>(c.total_updates) * dim);
        }
    }

    // returns true when a configured threshold was crossed at this record
    bool record(int64_t step, int64_t tau, double alpha, const std::vector<double>& x) {
        TraceRecord r;
        r.step = step;
        r.tau = tau;
        r.alpha = alpha;
        r.loss = kNaN;
        r.dist2 = kNaN;
        bool on_stride = (cfg->trace_stride <= 1) || (step % cfg->trace_stride == 0);
        bool crossed = false;
        if (on_stride) {
            r.loss = problem_loss(cfg->problem, x);
            if (x_star) r.dist2 = kernels::sq_dist(x, *x_star);
            if (cfg->loss_threshold && !trace.threshold_crossing &&
                r.loss <= *cfg->loss_threshold) {
                trace.threshold_crossing = step;
                crossed = true;
            }
        }
        trace.records.push_back(r);
        trace.staleness.add(tau);
        if (alpha > 0.0)
            ++trace.applied;
        else
            ++trace.skipped;
        if (cfg->record_increments) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                trace.increments.push_back(x[i] - prev_x[i]);
                prev_x[i] = x[i];
            }
        }
        return crossed;
    }

    RunTrace finish(const std::vector<double>& x) {
        trace.final_x = x;
        trace.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return std::move(trace);
    }
};

// step sizes for tau in [0, cap]; the simulated modes index this table
std::vector<double> build_policy_table(const PolicyWrapper& w, int64_t cap) {
    std::vector<double> t(static_cast<std::size_t>(cap) + 1);
    for (int64_t i = 0; i <= cap; ++i) t[static_cast<std::size_t>(i)] = w.step(i);
    return t;
}

}  // namespace

std::string run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::sequential: return "seq";
        case RunMode::sync: return "sync";
        case RunMode::async_threaded: return "async-threaded";
        case RunMode::async_simulated: return "async-sim";
    }
    return "?";
}

RunMode run_mode_from_name(const std::string& name) {
    if (name == "seq" || name == "sequential") return RunMode::sequential;
    if (name == "sync") return RunMode::sync;
    if (name == "async-threaded" || name == "threaded") return RunMode::async_threaded;
    if (name == "async-sim" || name == "async-simulated" || name == "sim")
        return RunMode::async_simulated;
    throw validation_error("unknown run mode: " + name);
}

void validate_config(const RunConfig& cfg) {
    if (cfg.total_updates < 1) throw validation_error("config: total updates must be >= 1");
    if (cfg.workers < 1) throw validation_error("config: workers must be >= 1");
    if (cfg.history_cap < 1) throw validation_error("config: history cap must be >= 1");
    if (cfg.trace_stride < 1) throw validation_error("config: trace stride must be >= 1");
    if (cfg.policy.cutoff && cfg.history_cap < *cfg.policy.cutoff)
        throw validation_error("config: history cap must cover the staleness cutoff");
    if (cfg.x0 && cfg.x0->size() != problem_dim(cfg.problem))
        throw validation_error("config: x0 dimension mismatch");
    if (cfg.mode == RunMode::sync) {
        if (problem_batch_size(cfg.problem) == 0)
            throw unsupported_error("sync mode requires a mini-batch structured problem");
    }
    if (cfg.mode == RunMode::async_simulated &&
        std::holds_alternative<std::monostate>(cfg.delay))
        throw validation_error("config: async-sim mode needs a delay source");
}

std::vector<double> default_x0(const RunConfig& cfg) {
    const std::size_t d = problem_dim(cfg.problem);
    if (cfg.x0) return *cfg.x0;
    if (const auto* q = std::get_if<QuadraticProblem>(&cfg.problem)) {
        // unit distance from the optimum
        std::vector<double> x0(q->x_star().begin(), q->x_star().end());
        double off = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& v : x0) v += off;
        return x0;
    }
    if (std::holds_alternative<FiniteSumProblem>(cfg.problem))
        return std::vector<double>(d, 0.0);
    const auto& m = std::get<MlpProblem>(cfg.problem);
    std::vector<double> x0(d);
    Rng rng(derive_seed(cfg.seed, detail::kInitStream, 0));
    m.default_init(rng, x0);
    return x0;
}

namespace detail {

void sampled_grad(const Problem& p, std::span<const double> x, uint64_t master,
                  uint64_t stream, uint64_t iter, std::span<double> out) {
    Rng rng(derive_seed(master, stream, iter));
    problem_grad(p, x, rng, out);
}

}  // namespace detail

RunTrace run_sequential(const RunConfig& cfg) {
    validate_config(cfg);
    const std::size_t d = problem_dim(cfg.problem);
    std::vector<double> x = default_x0(cfg);
    Recorder rec(cfg, d, x, problem_x_star(cfg.problem));
    const double alpha0 = cfg.policy.step(0);
    std::vector<double> g(d);
    for (int64_t t = 0; t < cfg.total_updates; ++t) {
        detail::sampled_grad(cfg.problem, x, cfg.seed, 0, static_cast<uint64_t>(t), g);
        if (alpha0 > 0.0) kernels::axpy(-alpha0, g, x);
        bool crossed = rec.record(t, 0, alpha0, x);
        if (crossed && cfg.stop_at_threshold) break;
    }
    return rec.finish(x);
}

RunTrace run_sync(const RunConfig& cfg) {
    validate_config(cfg);
    const std::size_t d = problem_dim(cfg.problem);
    const int64_t m = cfg.workers;
    std::vector<double> x = default_x0(cfg);
    Recorder rec(cfg, d, x, problem_x_star(cfg.problem));
    rec.trace.effective_batch = m * problem_batch_size(cfg.problem);

    const double alpha0 = cfg.policy.step(0);
    const int64_t b = problem_batch_size(cfg.problem);
    std::vector<double> g(d), gw(d);
    std::vector<int64_t> batch, chunk;
    for (int64_t t = 0; t < cfg.total_updates; ++t) {
        // one m*b draw chunked across workers: averaging the m worker
        // gradients reproduces the effective-batch gradient exactly
        Rng rng(derive_seed(cfg.seed, 0, static_cast<uint64_t>(t)));
        std::fill(g.begin(), g.end(), 0.0);
        if (const auto* fs = std::get_if<FiniteSumProblem>(&cfg.problem)) {
            fs->sample_batch(rng, m * b, batch);
            for (int64_t k = 0; k < m; ++k) {
                chunk.assign(batch.begin() + k * b, batch.begin() + (k + 1) * b);
                fs->grad_at_batch(x, chunk, gw);
                kernels::axpy(1.0 / static_cast<double>(m), gw, g);
            }
        } else {
            const auto& mlp = std::get<MlpProblem>(cfg.problem);
            mlp.sample_batch(rng, m * b, batch);
            for (int64_t k = 0; k < m; ++k) {
                chunk.assign(batch.begin() + k * b, batch.begin() + (k + 1) * b);
                mlp.grad_at_batch(x, chunk, gw);
                kernels::axpy(1.0 / static_cast<double>(m), gw, g);
            }
        }
        if (alpha0 > 0.0) kernels::axpy(-alpha0, g, x);
        bool crossed = rec.record(t, 0, alpha0, x);
        if (crossed && cfg.stop_at_threshold) break;
    }
    return rec.finish(x);
}

namespace {

// Ring of the last H+1 parameter snapshots, indexed by applied-update count.
class SnapshotRing {
public:
    SnapshotRing(int64_t cap, const std::vector<double>& x0) : cap_(cap + 1) {
        ring_.assign(static_cast<std::size_t>(cap_), x0);
        newest_ = 0;  // snapshot index 0 = x0
    }
    // snapshot after `index` applied updates; index must be in (newest-cap, newest]
    const std::vector<double>& at(int64_t index) const {
        return ring_[static_cast<std::size_t>(index % cap_)];
    }
    void push(int64_t index, const std::vector<double>& x) {
        ring_[static_cast<std::size_t>(index % cap_)] = x;
        newest_ = index;
    }

private:
    int64_t cap_;
    int64_t newest_;
    std::vector<std::vector<double>> ring_;
};

struct EventQueueEntry {
    double time;
    int64_t worker;
    bool operator>(const EventQueueEntry& o) const {
        if (time != o.time) return time > o.time;
        return worker > o.worker;  // ties resolved by worker id
    }
};

}  // namespace

RunTrace run_async_simulated(const RunConfig& cfg) {
    validate_config(cfg);
    const std::size_t d = problem_dim(cfg.problem);
    const int64_t H = cfg.history_cap;
    std::vector<double> x = default_x0(cfg);
    Recorder rec(cfg, d, x, problem_x_star(cfg.problem));
    SnapshotRing ring(H, x);
    std::vector<double> table = build_policy_table(cfg.policy, H);
    std::vector<double> g(d);

    int64_t applied = 0;

    auto apply_update = [&](int64_t step, int64_t tau_true, uint64_t grad_stream,
                            uint64_t grad_iter) -> bool {
        int64_t tau_view = std::min(tau_true, applied);
        if (tau_view > H) {
            tau_view = H;
            ++rec.trace.view_clamped;
        }
        double alpha = tau_true <= H ? table[static_cast<std::size_t>(tau_true)]
                                     : cfg.policy.step(tau_true);
        if (alpha > 0.0) {
            const std::vector<double>& view = ring.at(applied - tau_view);
            detail::sampled_grad(cfg.problem, view, cfg.seed, grad_stream, grad_iter, g);
            kernels::axpy(-alpha, g, x);
            ++applied;
            ring.push(applied, x);
        }
        return rec.record(step, tau_true, alpha, x);
    };

    if (const auto* model = std::get_if<StalenessModel>(&cfg.delay)) {
        for (int64_t t = 0; t < cfg.total_updates; ++t) {
            Rng delay_rng(derive_seed(cfg.seed, detail::kDelayStream, static_cast<uint64_t>(t)));
            int64_t tau = std::min(model->sample(delay_rng), applied);
            bool crossed = apply_update(t, tau, 0, static_cast<uint64_t>(t));
            if (crossed && cfg.stop_at_threshold) break;
        }
        return rec.finish(x);
    }

    const auto& ev = std::get<EventDrivenDelay>(cfg.delay);
    if (!(ev.compute_mean > 0.0) || !(ev.apply_time >= 0.0) || !(ev.gamma_shape > 0.0))
        throw validation_error("event-driven delay: bad timing parameters");
    const int64_t m = cfg.workers;
    std::vector<Rng> timing;
    timing.reserve(static_cast<std::size_t>(m));
    for (int64_t w = 0; w < m; ++w)
        timing.emplace_back(derive_seed(cfg.seed, detail::kTimingStreamBase + static_cast<uint64_t>(w), 0));
    auto draw_compute = [&](int64_t w) {
        auto& r = timing[static_cast<std::size_t>(w)];
        return ev.compute == EventDrivenDelay::ComputeDist::exponential
                   ? r.next_exponential(ev.compute_mean)
                   : r.next_gamma(ev.gamma_shape, ev.compute_mean / ev.gamma_shape);
    };

    std::priority_queue<EventQueueEntry, std::vector<EventQueueEntry>, std::greater<>> pq;
    std::vector<int64_t> read_count(static_cast<std::size_t>(m), 0);
    std::vector<uint64_t> local_iter(static_cast<std::size_t>(m), 0);
    for (int64_t w = 0; w < m; ++w) pq.push({draw_compute(w), w});
    double server_free = 0.0;

    for (int64_t t = 0; t < cfg.total_updates; ++t) {
        EventQueueEntry e = pq.top();
        pq.pop();
        const int64_t w = e.worker;
        double done = std::max(e.time, server_free) + ev.apply_time;
        server_free = done;
        int64_t tau = applied - read_count[static_cast<std::size_t>(w)];
        bool crossed = apply_update(t, tau, static_cast<uint64_t>(w),
                                    local_iter[static_cast<std::size_t>(w)]++);
        read_count[static_cast<std::size_t>(w)] = applied;
        pq.push({done + draw_compute(w), w});
        if (crossed && cfg.stop_at_threshold) break;
    }
    return rec.finish(x);
}

RunTrace run(const RunConfig& cfg) {
    switch (cfg.mode) {
        case RunMode::sequential: return run_sequential(cfg);
        case RunMode::sync: return run_sync(cfg);
        case RunMode::async_simulated: return run_async_simulated(cfg);
        case RunMode::async_threaded: return run_async_threaded(cfg);
    }
    throw validation_error("run: unknown mode");
}

void write_trace_csv(const RunTrace& trace, std::ostream& out) {
    out << "step,tau,alpha,loss,dist2\n";
    char buf[64];
    for (const auto& r : trace.records) {
        out << r.step << "," << r.tau << ",";
        std::snprintf(buf, sizeof buf, "%.17g", r.alpha);
        out << buf << ",";
        if (!std::isnan(r.loss)) {
            std::snprintf(buf, sizeof buf, "%.17g", r.loss);
            out << buf;
        }
        out << ",";
        if (!std::isnan(r.dist2)) {
            std::snprintf(buf, sizeof buf, "%.17g", r.dist2);
            out << buf;
        }
        out << "\n";
    }
}

}  // namespace stalesgd
