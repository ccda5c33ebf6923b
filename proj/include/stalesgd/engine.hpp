#pragma once

#include "stalesgd/distributions.hpp"
#include "stalesgd/problems.hpp"
#include "stalesgd/steppolicy.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace stalesgd {

enum class RunMode { sequential, sync, async_threaded, async_simulated };

std::string run_mode_name(RunMode m);
RunMode run_mode_from_name(const std::string& name);

// Virtual-time process: m workers with i.i.d. compute durations feeding a
// serialized applier with a constant per-update apply duration. Staleness
// emerges from the event order.
struct EventDrivenDelay {
    enum class ComputeDist { exponential, gamma };
    ComputeDist compute = ComputeDist::exponential;
    double compute_mean = 1.0;
    double gamma_shape = 4.0;  // used when compute == gamma
    double apply_time = 0.4;
};

// monostate = no delay source (sequential/sync/threaded)
using DelaySource = std::variant<std::monostate, StalenessModel, EventDrivenDelay>;

struct RunConfig {
    RunMode mode = RunMode::sequential;
    Problem problem;
    PolicyWrapper policy{StepPolicy::constant(1e-3)};
    int64_t workers = 1;
    int64_t total_updates = 0;
    uint64_t seed = 0;
    int64_t trace_stride = 1;
    DelaySource delay;
    int64_t history_cap = 512;
    std::optional<std::vector<double>> x0;
    bool record_increments = false;
    std::optional<double> loss_threshold;
    bool stop_at_threshold = false;
};

struct TraceRecord {
    int64_t step = 0;
    int64_t tau = 0;
    double alpha = 0.0;  // 0 = skipped
    double loss = 0.0;   // NaN off-stride
    double dist2 = 0.0;  // NaN off-stride or when x* unknown
};

struct RunTrace {
    RunMode mode = RunMode::sequential;
    std::size_t dim = 0;
    std::vector<TraceRecord> records;
    std::vector<double> x0;
    std::vector<double> final_x;
    StalenessHistogram staleness;
    int64_t applied = 0;
    int64_t skipped = 0;
    int64_t view_clamped = 0;  // views older than the history cap
    int64_t effective_batch = 0;
    double wall_seconds = 0.0;
    std::optional<int64_t> threshold_crossing;
    // row-major records.size() x dim, filled when RunConfig::record_increments
    std::vector<double> increments;
};

RunTrace run(const RunConfig& cfg);

RunTrace run_sequential(const RunConfig& cfg);
RunTrace run_sync(const RunConfig& cfg);
RunTrace run_async_simulated(const RunConfig& cfg);
RunTrace run_async_threaded(const RunConfig& cfg);

// CSV with header "step,tau,alpha,loss,dist2"; loss/dist2 empty off-stride.
void write_trace_csv(const RunTrace& trace, std::ostream& out);

// shared helpers (used by the engine and by tests)
std::vector<double> default_x0(const RunConfig& cfg);
void validate_config(const RunConfig& cfg);

namespace detail {
// one stochastic gradient with the per-update sub-seed (master, stream, iter)
void sampled_grad(const Problem& p, std::span<const double> x, uint64_t master,
                  uint64_t stream, uint64_t iter, std::span<double> out);
constexpr uint64_t kDelayStream = 1ull << 40;
constexpr uint64_t kTimingStreamBase = 1ull << 41;
constexpr uint64_t kInitStream = 1ull << 42;
}  // namespace detail

}  // namespace stalesgd
