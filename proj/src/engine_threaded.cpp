#include "stalesgd/engine.hpp"
#include "stalesgd/errors.hpp"
#include "stalesgd/kernels.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <thread>

namespace stalesgd {

namespace {

uint64_t fnv1a(const void* data, std::size_t bytes, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

struct Snapshot {
    std::vector<double> x;
    int64_t clock = 0;
    uint64_t checksum = 0;

    static std::shared_ptr<const Snapshot> make(std::vector<double> x, int64_t clock) {
        auto s = std::make_shared<Snapshot>();
        s->x = std::move(x);
        s->clock = clock;
        s->checksum = fnv1a(s->x.data(), s->x.size() * sizeof(double),
                            fnv1a(&clock, sizeof clock));
        return s;
    }
    bool verify() const {
        return checksum ==
               fnv1a(x.data(), x.size() * sizeof(double), fnv1a(&clock, sizeof clock));
    }
};

struct Submission {
    int64_t read_clock = 0;
    int64_t worker = 0;
    std::vector<double> grad;
};

// MPSC channel preserving per-worker order; applier consumes one at a time.
struct Channel {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Submission> q;
    bool closed = false;

    void push(Submission s) {
        {
            std::lock_guard lk(mu);
            q.push_back(std::move(s));
        }
        cv.notify_one();
    }
    bool pop(Submission& out) {
        std::unique_lock lk(mu);
        cv.wait(lk, [&] { return !q.empty() || closed; });
        if (q.empty()) return false;
        out = std::move(q.front());
        q.pop_front();
        return true;
    }
    void close() {
        {
            std::lock_guard lk(mu);
            closed = true;
        }
        cv.notify_all();
    }
};

// per-worker response slot: the applier hands back the snapshot that
// includes the worker's own update (Alg-1 send/receive pairing)
struct ResponseSlot {
    std::mutex mu;
    std::condition_variable cv;
    std::shared_ptr<const Snapshot> snap;
    bool stop = false;

    void deliver(std::shared_ptr<const Snapshot> s) {
        {
            std::lock_guard lk(mu);
            snap = std::move(s);
        }
        cv.notify_one();
    }
    void shutdown() {
        {
            std::lock_guard lk(mu);
            stop = true;
        }
        cv.notify_one();
    }
    // returns nullptr on shutdown
    std::shared_ptr<const Snapshot> await() {
        std::unique_lock lk(mu);
        cv.wait(lk, [&] { return snap != nullptr || stop; });
        auto s = std::move(snap);
        snap = nullptr;
        return s;
    }
};

}  // namespace

RunTrace run_async_threaded(const RunConfig& cfg) {
    validate_config(cfg);
    const std::size_t d = problem_dim(cfg.problem);
    const int64_t m = cfg.workers;
    const int64_t T = cfg.total_updates;

    std::vector<double> x = default_x0(cfg);
    auto x_star = problem_x_star(cfg.problem);

    RunTrace trace;
    trace.mode = cfg.mode;
    trace.dim = d;
    trace.x0 = x;
    if (cfg.record_increments)
        trace.increments.reserve(static_cast<std::size_t>(T) * d);

    Channel channel;
    std::vector<std::unique_ptr<ResponseSlot>> slots;
    for (int64_t w = 0; w < m; ++w) slots.push_back(std::make_unique<ResponseSlot>());

    std::mutex err_mu;
    std::string worker_error;

    auto initial = Snapshot::make(x, 0);

    auto worker_fn = [&](int64_t w) {
        try {
            std::shared_ptr<const Snapshot> snap = initial;
            std::vector<double> g(d);
            uint64_t iter = 0;
            for (;;) {
                if (!snap->verify())
                    throw numeric_error("worker " + std::to_string(w) +
                                        ": torn snapshot read detected");
                detail::sampled_grad(cfg.problem, snap->x, cfg.seed,
                                     static_cast<uint64_t>(w), iter++, g);
                channel.push(Submission{snap->clock, w, g});
                snap = slots[static_cast<std::size_t>(w)]->await();
                if (!snap) return;
            }
        } catch (const std::exception& e) {
            {
                std::lock_guard lk(err_mu);
                if (worker_error.empty()) worker_error = e.what();
            }
            channel.close();
        }
    };

    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(m));
    for (int64_t w = 0; w < m; ++w) threads.emplace_back(worker_fn, w);

    // applier: the single owner of the mutable state
    int64_t clock = 0;  // applied updates
    std::vector<double> prev_x = x;
    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    bool aborted = false;
    for (int64_t t = 0; t < T; ++t) {
        Submission sub;
        if (!channel.pop(sub)) {
            aborted = true;
            break;
        }
        int64_t tau = clock - sub.read_clock;
        double alpha = cfg.policy.step(tau);
        if (alpha > 0.0) {
            kernels::axpy(-alpha, sub.grad, x);
            ++clock;
            ++trace.applied;
        } else {
            ++trace.skipped;
        }
        TraceRecord r;
        r.step = t;
        r.tau = tau;
        r.alpha = alpha;
        r.loss = kNaN;
        r.dist2 = kNaN;
        bool on_stride = (cfg.trace_stride <= 1) || (t % cfg.trace_stride == 0);
        if (on_stride) {
            r.loss = problem_loss(cfg.problem, x);
            if (x_star) r.dist2 = kernels::sq_dist(x, *x_star);
            if (cfg.loss_threshold && !trace.threshold_crossing && r.loss <= *cfg.loss_threshold)
                trace.threshold_crossing = t;
        }
        trace.records.push_back(r);
        trace.staleness.add(tau);
        if (cfg.record_increments) {
            for (std::size_t i = 0; i < d; ++i) {
                trace.increments.push_back(x[i] - prev_x[i]);
                prev_x[i] = x[i];
            }
        }
        bool last = (t + 1 == T) ||
                    (cfg.stop_at_threshold && trace.threshold_crossing &&
                     *trace.threshold_crossing == t);
        if (!last) {
            slots[static_cast<std::size_t>(sub.worker)]->deliver(Snapshot::make(x, clock));
        }
        if (last && cfg.stop_at_threshold && trace.threshold_crossing) break;
    }

    for (auto& s : slots) s->shutdown();
    channel.close();
    for (auto& th : threads) th.join();

    {
        std::lock_guard lk(err_mu);
        if (!worker_error.empty())
            throw numeric_error("threaded run aborted after " +
                                std::to_string(trace.records.size()) +
                                " records: " + worker_error);
    }
    if (aborted)
        throw numeric_error("threaded run aborted: channel closed after " +
                            std::to_string(trace.records.size()) + " records");

    trace.final_x = x;
    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return trace;
}

}  // namespace stalesgd
