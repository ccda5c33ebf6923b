#include "stalesgd/analysis.hpp"
#include "stalesgd/engine.hpp"
#include "stalesgd/errors.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using json = nlohmann::json;
using namespace stalesgd;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double to_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw validation_error("cannot parse number '" + s + "' in " + what);
    }
}

int64_t to_int(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw validation_error("cannot parse integer '" + s + "' in " + what);
    }
}

StalenessModel parse_model(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw validation_error("model spec needs the form kind:params, got '" + spec + "'");
    std::string kind = spec.substr(0, colon);
    auto args = split(spec.substr(colon + 1), ',');
    if (kind == "geom" || kind == "geometric") {
        if (args.size() != 1) throw validation_error("geom model takes one parameter: p");
        return StalenessModel::geometric(to_double(args[0], spec));
    }
    if (kind == "uniform" || kind == "unif") {
        if (args.size() != 1)
            throw validation_error("uniform model takes one parameter: tau_hat");
        return StalenessModel::uniform(to_int(args[0], spec));
    }
    if (kind == "poisson" || kind == "pois") {
        if (args.size() != 1) throw validation_error("poisson model takes one parameter: lambda");
        return StalenessModel::poisson(to_double(args[0], spec));
    }
    if (kind == "cmp") {
        if (args.size() != 2) throw validation_error("cmp model takes lambda,nu");
        return StalenessModel::cmp(to_double(args[0], spec), to_double(args[1], spec));
    }
    throw validation_error("unknown model kind '" + kind + "'");
}

// Policies are written kind:arg,... ; short forms of the tuned kinds take
// lambda (and nu, p) from a context model when one is available.
StepPolicy parse_policy(const std::string& spec, const StalenessModel* ctx) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw validation_error("policy spec needs the form kind:params, got '" + spec + "'");
    std::string kind = spec.substr(0, colon);
    auto args = split(spec.substr(colon + 1), ',');
    auto need_ctx = [&](const char* who) {
        if (!ctx)
            throw validation_error(std::string(who) + ": short form needs --model context");
        return ctx;
    };
    if (kind == "const" || kind == "constant") {
        if (args.size() != 1) throw validation_error("const policy takes alpha");
        return StepPolicy::constant(to_double(args[0], spec));
    }
    if (kind == "inv-tau") {
        if (args.size() != 1) throw validation_error("inv-tau policy takes alpha");
        return StepPolicy::inverse_tau(to_double(args[0], spec));
    }
    if (kind == "geom-tuned") {
        if (args.size() == 3)
            return StepPolicy::geometric_tuned(to_double(args[0], spec),
                                               to_double(args[1], spec),
                                               to_double(args[2], spec));
        if (args.size() == 2) {
            auto* m = need_ctx("geom-tuned");
            if (m->family() != Family::geometric)
                throw validation_error("geom-tuned short form needs a geometric model");
            return StepPolicy::geometric_tuned(m->p(), to_double(args[0], spec),
                                               to_double(args[1], spec));
        }
        throw validation_error("geom-tuned takes p,mu_target,alpha or mu_target,alpha");
    }
    if (kind == "cmp-zero") {
        if (args.size() == 4)
            return StepPolicy::cmp_zero(to_double(args[0], spec), to_double(args[1], spec),
                                        to_double(args[2], spec), to_double(args[3], spec));
        if (args.size() == 2) {
            auto* m = need_ctx("cmp-zero");
            if (m->family() != Family::cmp)
                throw validation_error("cmp-zero short form needs a cmp model");
            return StepPolicy::cmp_zero(m->lambda(), m->nu(), to_double(args[0], spec),
                                        to_double(args[1], spec));
        }
        throw validation_error("cmp-zero takes lambda,nu,C,alpha or C,alpha");
    }
    if (kind == "cmp-tune") {
        if (args.size() == 4)
            return StepPolicy::cmp_tune(to_double(args[0], spec), to_double(args[1], spec),
                                        to_double(args[2], spec), to_double(args[3], spec));
        if (args.size() == 2) {
            auto* m = need_ctx("cmp-tune");
            if (m->family() != Family::cmp)
                throw validation_error("cmp-tune short form needs a cmp model");
            return StepPolicy::cmp_tune(m->lambda(), m->nu(), to_double(args[0], spec),
                                        to_double(args[1], spec));
        }
        throw validation_error("cmp-tune takes lambda,nu,K,alpha or K,alpha");
    }
    if (kind == "poisson-tune") {
        if (args.size() == 3)
            return StepPolicy::poisson_tune(to_double(args[0], spec), to_double(args[1], spec),
                                            to_double(args[2], spec));
        if (args.size() == 2) {
            auto* m = need_ctx("poisson-tune");
            if (m->family() != Family::poisson && m->family() != Family::cmp)
                throw validation_error("poisson-tune short form needs a poisson model");
            return StepPolicy::poisson_tune(m->lambda(), to_double(args[0], spec),
                                            to_double(args[1], spec));
        }
        throw validation_error("poisson-tune takes lambda,K,alpha or K,alpha");
    }
    throw validation_error("unknown policy kind '" + kind + "'");
}

StepPolicy policy_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    const json& p = j.at("params");
    auto get = [&](const char* name) { return p.at(name).get<double>(); };
    PolicyKind k = policy_kind_from_name(kind);
    switch (k) {
        case PolicyKind::constant: return StepPolicy::constant(get("alpha"));
        case PolicyKind::inverse_tau: return StepPolicy::inverse_tau(get("alpha"));
        case PolicyKind::geometric_tuned:
            return StepPolicy::geometric_tuned(get("p"), get("mu_target"), get("alpha"));
        case PolicyKind::cmp_zero:
            return StepPolicy::cmp_zero(get("lambda"), get("nu"), get("C"), get("alpha"));
        case PolicyKind::cmp_tune:
            return StepPolicy::cmp_tune(get("lambda"), get("nu"), get("K"), get("alpha"));
        case PolicyKind::poisson_tune:
            return StepPolicy::poisson_tune(get("lambda"), get("K"), get("alpha"));
    }
    throw validation_error("unknown policy kind in json: " + kind);
}

Problem parse_problem(const std::string& spec) {
    if (spec == "quad-1d") return QuadraticProblem::diagonal({1.0}, {0.0}, 0.0);
    auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw validation_error("problem spec needs the form kind:params, got '" + spec + "'");
    std::string kind = spec.substr(0, colon);
    auto args = split(spec.substr(colon + 1), ',');
    if (kind == "quad") {
        if (args.size() != 4)
            throw validation_error("quad problem takes d,lambda_min,lambda_max,sigma");
        int64_t d = to_int(args[0], spec);
        double lo = to_double(args[1], spec), hi = to_double(args[2], spec);
        double sigma = to_double(args[3], spec);
        if (d < 1) throw validation_error("quad problem: d must be >= 1");
        std::vector<double> spectrum(static_cast<std::size_t>(d));
        for (int64_t i = 0; i < d; ++i)
            spectrum[static_cast<std::size_t>(i)] =
                d == 1 ? lo
                       : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(d - 1);
        return QuadraticProblem::diagonal(std::move(spectrum),
                                          std::vector<double>(static_cast<std::size_t>(d), 0.0),
                                          sigma);
    }
    if (kind == "lsq") {
        if (args.size() != 4 && args.size() != 5)
            throw validation_error("lsq problem takes n,d,noise,batch[,dataseed]");
        uint64_t dataseed = args.size() == 5 ? static_cast<uint64_t>(to_int(args[4], spec)) : 1;
        return FiniteSumProblem::synthetic(to_int(args[0], spec),
                                           static_cast<std::size_t>(to_int(args[1], spec)),
                                           to_double(args[2], spec), dataseed,
                                           to_int(args[3], spec));
    }
    if (kind == "mlp") {
        if (args.size() != 3 && args.size() != 4)
            throw validation_error("mlp problem takes hidden,n,batch[,dataseed]");
        uint64_t dataseed = args.size() == 4 ? static_cast<uint64_t>(to_int(args[3], spec)) : 1;
        return MlpProblem::blobs(static_cast<std::size_t>(to_int(args[0], spec)),
                                 to_int(args[1], spec), dataseed, to_int(args[2], spec));
    }
    throw validation_error("unknown problem kind '" + kind + "'");
}

// rewrites the batch field of an lsq/mlp problem spec
std::string apply_batch_override(const std::string& spec, int64_t batch) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw validation_error("--batch needs an lsq: or mlp: problem");
    std::string kind = spec.substr(0, colon);
    auto args = split(spec.substr(colon + 1), ',');
    std::size_t pos;
    if (kind == "lsq" && (args.size() == 4 || args.size() == 5))
        pos = 3;
    else if (kind == "mlp" && (args.size() == 3 || args.size() == 4))
        pos = 2;
    else
        throw validation_error("--batch needs an lsq: or mlp: problem");
    args[pos] = std::to_string(batch);
    std::string out = kind + ":";
    for (std::size_t i = 0; i < args.size(); ++i) out += (i ? "," : "") + args[i];
    return out;
}

DelaySource parse_delay(const std::string& spec) {
    if (spec.empty()) return std::monostate{};
    if (spec.rfind("event:", 0) == 0) {
        auto args = split(spec.substr(6), ',');
        if (args.size() != 2 && args.size() != 3)
            throw validation_error("event delay takes compute_mean,apply_time[,gamma_shape]");
        EventDrivenDelay ev;
        ev.compute_mean = to_double(args[0], spec);
        ev.apply_time = to_double(args[1], spec);
        if (args.size() == 3) {
            ev.compute = EventDrivenDelay::ComputeDist::gamma;
            ev.gamma_shape = to_double(args[2], spec);
        }
        return ev;
    }
    return parse_model(spec);
}

struct RunSpec {
    std::string mode = "seq";
    std::string problem = "quad-1d";
    std::string policy;  // policy spec string; empty when policy_json is set
    json policy_json;
    std::optional<double> scale;
    std::optional<double> clip_cap;
    std::optional<int64_t> cutoff;
    int64_t workers = 1;
    int64_t steps = 0;
    uint64_t seed = 0;
    int64_t stride = 1;
    std::string delay;
    int64_t history_cap = 512;
    std::optional<std::vector<double>> x0;
    bool record_increments = false;
    std::optional<double> loss_threshold;
    bool stop_at_threshold = false;
};

RunConfig build_config(const RunSpec& s) {
    RunConfig cfg;
    cfg.mode = run_mode_from_name(s.mode);
    cfg.problem = parse_problem(s.problem);
    StepPolicy pol =
        s.policy.empty() ? policy_from_json(s.policy_json) : parse_policy(s.policy, nullptr);
    PolicyWrapper w(pol);
    w.scale = s.scale;
    w.clip_cap = s.clip_cap;
    w.cutoff = s.cutoff;
    cfg.policy = w;
    cfg.workers = s.workers;
    cfg.total_updates = s.steps;
    cfg.seed = s.seed;
    cfg.trace_stride = s.stride;
    cfg.delay = parse_delay(s.delay);
    cfg.history_cap = s.history_cap;
    cfg.x0 = s.x0;
    cfg.record_increments = s.record_increments;
    cfg.loss_threshold = s.loss_threshold;
    cfg.stop_at_threshold = s.stop_at_threshold;
    return cfg;
}

json config_echo(const RunSpec& s, const RunConfig& cfg) {
    json j;
    j["mode"] = s.mode;
    j["problem"] = s.problem;
    if (!s.policy.empty())
        j["policy"] = s.policy;
    else
        j["policy_json"] = s.policy_json;
    j["wrappers"] = {{"scale", s.scale ? json(*s.scale) : json(nullptr)},
                     {"clip_cap", s.clip_cap ? json(*s.clip_cap) : json(nullptr)},
                     {"cutoff", s.cutoff ? json(*s.cutoff) : json(nullptr)}};
    j["workers"] = s.workers;
    j["steps"] = s.steps;
    j["seed"] = s.seed;
    j["stride"] = s.stride;
    j["delay"] = s.delay.empty() ? json(nullptr) : json(s.delay);
    j["history_cap"] = s.history_cap;
    j["x0"] = json(default_x0(cfg));  // resolved start point, rerunnable as-is
    j["record_increments"] = s.record_increments;
    j["loss_threshold"] = s.loss_threshold ? json(*s.loss_threshold) : json(nullptr);
    j["stop_at_threshold"] = s.stop_at_threshold;
    return j;
}

RunSpec spec_from_json(const json& j) {
    RunSpec s;
    s.mode = j.at("mode").get<std::string>();
    s.problem = j.at("problem").get<std::string>();
    if (j.contains("policy") && !j["policy"].is_null())
        s.policy = j["policy"].get<std::string>();
    else
        s.policy_json = j.at("policy_json");
    const json& w = j.at("wrappers");
    if (!w.at("scale").is_null()) s.scale = w["scale"].get<double>();
    if (!w.at("clip_cap").is_null()) s.clip_cap = w["clip_cap"].get<double>();
    if (!w.at("cutoff").is_null()) s.cutoff = w["cutoff"].get<int64_t>();
    s.workers = j.at("workers").get<int64_t>();
    s.steps = j.at("steps").get<int64_t>();
    s.seed = j.at("seed").get<uint64_t>();
    s.stride = j.at("stride").get<int64_t>();
    if (!j.at("delay").is_null()) s.delay = j["delay"].get<std::string>();
    s.history_cap = j.at("history_cap").get<int64_t>();
    if (j.contains("x0") && !j["x0"].is_null()) s.x0 = j["x0"].get<std::vector<double>>();
    s.record_increments = j.at("record_increments").get<bool>();
    if (!j.at("loss_threshold").is_null()) s.loss_threshold = j["loss_threshold"].get<double>();
    s.stop_at_threshold = j.at("stop_at_threshold").get<bool>();
    return s;
}

json histogram_json(const StalenessHistogram& h) {
    json j = json::object();
    for (const auto& [tau, count] : h.counts) j[std::to_string(tau)] = count;
    return j;
}

void write_increments_csv(const RunTrace& tr, std::ostream& out) {
    out << "step";
    for (std::size_t c = 0; c < tr.dim; ++c) out << ",dx" << c;
    out << "\n";
    char buf[64];
    for (std::size_t t = 0; t < tr.records.size(); ++t) {
        out << tr.records[t].step;
        for (std::size_t c = 0; c < tr.dim; ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", tr.increments[t * tr.dim + c]);
            out << "," << buf;
        }
        out << "\n";
    }
}

RunTrace load_increments_csv(std::istream& in) {
    RunTrace tr;
    std::string line;
    if (!std::getline(in, line)) throw validation_error("increments csv: empty file");
    std::size_t dim = split(line, ',').size();
    if (dim < 2) throw validation_error("increments csv: expected step,dx0,... header");
    tr.dim = dim - 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split(line, ',');
        if (cells.size() != dim) throw validation_error("increments csv: ragged row");
        TraceRecord r;
        r.step = to_int(cells[0], "increments csv");
        tr.records.push_back(r);
        for (std::size_t c = 1; c < dim; ++c)
            tr.increments.push_back(to_double(cells[c], "increments csv"));
    }
    if (tr.records.empty()) throw validation_error("increments csv: no rows");
    return tr;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw validation_error("cannot open output file: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw validation_error("cannot open input file: " + path);
    return f;
}

void emit(const json& j, const std::string& out_path) {
    if (!out_path.empty()) {
        auto f = open_out(out_path);
        f << j.dump(2) << "\n";
    } else {
        std::cout << j.dump(2) << "\n";
    }
}

json bounds_report_json(const BoundsReport& r) {
    json j;
    j["kind"] = r.kind;
    j["feasible"] = r.feasible;
    j["T"] = r.feasible ? json(r.T) : json(nullptr);
    j["T_ceil"] = r.feasible ? json(r.T_ceil) : json(nullptr);
    if (std::isfinite(r.alpha)) j["alpha"] = r.alpha;
    j["denominator"] = r.denominator;
    j["E_alpha"] = r.e_alpha;
    j["E_alpha_sq"] = r.e_alpha_sq;
    j["E_tau_alpha"] = r.e_tau_alpha;
    if (!r.note.empty()) j["note"] = r.note;
    return j;
}

int64_t updates_per_epoch(const Problem& p) {
    int64_t n = problem_dataset_size(p);
    int64_t b = problem_batch_size(p);
    if (n == 0 || b == 0) return 0;
    return (n + b - 1) / b;
}

// ---------------------------------------------------------------------------

int cmd_run(const RunSpec& spec, const std::string& trace_path,
            const std::string& summary_path, const std::string& increments_path,
            bool estimate_momentum_flag) {
    RunSpec effective = spec;
    if (!increments_path.empty() || estimate_momentum_flag) effective.record_increments = true;
    RunConfig cfg = build_config(effective);
    RunTrace tr = run(cfg);

    if (!trace_path.empty()) {
        auto f = open_out(trace_path);
        write_trace_csv(tr, f);
    }
    if (!increments_path.empty()) {
        auto f = open_out(increments_path);
        write_increments_csv(tr, f);
    }
    json s;
    s["config"] = config_echo(effective, cfg);
    s["mode"] = run_mode_name(tr.mode);
    s["applied"] = tr.applied;
    s["skipped"] = tr.skipped;
    s["view_clamped"] = tr.view_clamped;
    s["staleness_histogram"] = histogram_json(tr.staleness);
    s["wall_seconds"] = tr.wall_seconds;
    s["final_loss"] = problem_loss(cfg.problem, tr.final_x);
    auto xs = problem_x_star(cfg.problem);
    if (xs) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < xs->size(); ++i) {
            double d = tr.final_x[i] - (*xs)[i];
            d2 += d * d;
        }
        s["final_dist2"] = d2;
    } else {
        s["final_dist2"] = nullptr;
    }
    if (tr.effective_batch > 0) s["effective_batch"] = tr.effective_batch;
    s["updates_to_threshold"] =
        tr.threshold_crossing ? json(*tr.threshold_crossing + 1) : json(nullptr);
    int64_t upe = updates_per_epoch(cfg.problem);
    if (tr.threshold_crossing && upe > 0)
        s["epochs_to_threshold"] =
            static_cast<double>(*tr.threshold_crossing + 1) / static_cast<double>(upe);
    else
        s["epochs_to_threshold"] = nullptr;
    if (estimate_momentum_flag) {
        auto est = estimate_implicit_momentum(tr);
        s["momentum"] = {
            {"mu_hat", est.mu_hat},
            {"std_error", std::isfinite(est.std_error) ? json(est.std_error) : json(nullptr)},
            {"method", est.method},
            {"per_coordinate", est.per_coordinate}};
    }
    if (!summary_path.empty()) {
        auto f = open_out(summary_path);
        f << s.dump(2) << "\n";
    } else {
        std::cout << s.dump(2) << "\n";
    }
    return 0;
}

int cmd_fit(const std::string& hist_path, const std::string& families_arg, int64_t workers,
            const std::string& out_path) {
    auto f = open_in(hist_path);
    auto hist = load_histogram_csv(f);
    std::vector<Family> fams;
    if (families_arg == "all") {
        fams = {Family::geometric, Family::uniform, Family::poisson, Family::cmp};
    } else {
        for (const auto& name : split(families_arg, ','))
            fams.push_back(family_from_name(name));
    }
    json reports = json::array();
    std::vector<std::pair<double, std::string>> ranking;
    for (Family fam : fams) {
        FitReport rep = fit(hist, fam, workers);
        json r;
        r["family"] = family_name(fam);
        json params = json::object();
        for (const auto& [k, v] : rep.model.params()) params[k] = v;
        r["params"] = params;
        r["distance"] = rep.distance;
        r["grid"] = {{"parameter", rep.grid.parameter},
                     {"lo", rep.grid.lo},
                     {"hi", rep.grid.hi},
                     {"step", rep.grid.step},
                     {"points", rep.grid.points}};
        reports.push_back(r);
        ranking.emplace_back(rep.distance, family_name(fam));
    }
    std::sort(ranking.begin(), ranking.end());
    json out;
    out["reports"] = reports;
    json rank = json::array();
    for (const auto& [d, name] : ranking) rank.push_back(name);
    out["ranking"] = rank;
    emit(out, out_path);
    return 0;
}

int cmd_bounds(double c, double L, double M, double eps, double tau_bar, double theta,
               double d0_sq, const std::string& model_spec, const std::string& policy_spec,
               const std::string& out_path) {
    BoundsInput in;
    in.c = c;
    in.L = L;
    in.M = M;
    in.eps = eps;
    in.tau_bar = tau_bar;
    in.theta = theta;
    in.d0_sq = d0_sq;
    json out;
    auto [alpha, crep] = alpha_choice_and_bound(in);
    out["constant_alpha"] = bounds_report_json(crep);
    out["alpha_choice"] = alpha;
    BoundsInput gin = in;
    gin.e_alpha = alpha;
    gin.e_tau_alpha = tau_bar * alpha;
    gin.e_alpha_sq = alpha * alpha;
    out["general"] = bounds_report_json(bound_general(gin));
    if (!model_spec.empty() && !policy_spec.empty()) {
        auto model = parse_model(model_spec);
        auto pol = PolicyWrapper(parse_policy(policy_spec, &model));
        out["decaying"] = bounds_report_json(bound_decaying(model, pol, in));
    } else {
        out["decaying"] = nullptr;
    }
    emit(out, out_path);
    return 0;
}

int cmd_analyze_drift(const std::string& model_spec, const std::string& policy_spec,
                      int64_t imax, const std::string& out_path) {
    auto model = parse_model(model_spec);
    auto pol = parse_policy(policy_spec, &model);
    auto rep = drift_report(model, pol, imax);
    json out;
    out["theorem"] = drift_theorem_name(rep.theorem);
    out["residual"] = rep.residual;
    out["leading_coeff"] = rep.leading_coeff;
    out["recovered_momentum"] =
        rep.recovered_momentum ? json(*rep.recovered_momentum) : json(nullptr);
    out["momentum_target"] = rep.momentum_target ? json(*rep.momentum_target) : json(nullptr);
    out["w"] = rep.w;
    out["d"] = rep.d;
    emit(out, out_path);
    return 0;
}

int cmd_analyze_momentum(const std::vector<std::string>& increments_paths, double warmup,
                         int max_lag, const std::string& out_path) {
    std::vector<RunTrace> traces;
    for (const auto& path : increments_paths) {
        auto f = open_in(path);
        traces.push_back(load_increments_csv(f));
    }
    MomentumOptions opts;
    opts.warmup_frac = warmup;
    opts.max_lag = max_lag;
    auto est = estimate_implicit_momentum(traces, opts);
    json out;
    out["mu_hat"] = est.mu_hat;
    out["std_error"] = std::isfinite(est.std_error) ? json(est.std_error) : json(nullptr);
    out["method"] = est.method;
    out["per_coordinate"] = est.per_coordinate;
    out["traces"] = increments_paths.size();
    emit(out, out_path);
    return 0;
}

int cmd_sweep(const std::string& workers_arg, int64_t repeats, const std::string& problem_spec,
              double alpha_c, double threshold, int64_t max_steps, int64_t pilot_steps,
              double compute_mean, double apply_time, uint64_t seed,
              const std::string& out_path) {
    std::vector<int64_t> worker_counts;
    for (const auto& w : split(workers_arg, ',')) worker_counts.push_back(to_int(w, "workers"));
    if (worker_counts.empty()) throw validation_error("sweep: empty worker list");
    if (repeats < 1) throw validation_error("sweep: repeats must be >= 1");

    EventDrivenDelay ev;
    ev.compute_mean = compute_mean;
    ev.apply_time = apply_time;

    std::ostringstream csv;
    csv << "m,policy,median_updates,stddev_updates,repeats,unconverged\n";

    auto run_one = [&](int64_t m, const PolicyWrapper& pol, uint64_t run_seed) -> int64_t {
        RunConfig cfg;
        cfg.mode = RunMode::async_simulated;
        cfg.problem = parse_problem(problem_spec);
        cfg.policy = pol;
        cfg.workers = m;
        cfg.total_updates = max_steps;
        cfg.seed = run_seed;
        cfg.trace_stride = 25;
        cfg.delay = ev;
        cfg.loss_threshold = threshold;
        cfg.stop_at_threshold = true;
        auto tr = run_async_simulated(cfg);
        return tr.threshold_crossing ? *tr.threshold_crossing + 1 : -1;
    };

    for (int64_t m : worker_counts) {
        // a constant-step pilot run measures the tau distribution that the
        // adaptive policy is then normalized against
        RunConfig pilot;
        pilot.mode = RunMode::async_simulated;
        pilot.problem = parse_problem(problem_spec);
        pilot.policy = PolicyWrapper(StepPolicy::constant(alpha_c));
        pilot.workers = m;
        pilot.total_updates = pilot_steps;
        pilot.seed = derive_seed(seed, 0xBEEF, static_cast<uint64_t>(m));
        pilot.trace_stride = pilot_steps;
        pilot.delay = ev;
        auto pilot_tr = run_async_simulated(pilot);

        auto adaptive_raw = StepPolicy::poisson_tune(static_cast<double>(m), alpha_c, alpha_c);
        auto adaptive = clip_and_cutoff(normalize(adaptive_raw, pilot_tr.staleness, alpha_c),
                                        alpha_c, 5.0, 150);
        auto constant = PolicyWrapper(StepPolicy::constant(alpha_c));

        for (auto [name, pol] : {std::pair<std::string, PolicyWrapper>{"const", constant},
                                 {"adaptive", adaptive}}) {
            std::vector<double> updates;
            int64_t unconverged = 0;
            for (int64_t r = 0; r < repeats; ++r) {
                int64_t u = run_one(m, pol, seed + static_cast<uint64_t>(r));
                if (u < 0) {
                    ++unconverged;
                    u = max_steps;
                }
                updates.push_back(static_cast<double>(u));
            }
            std::sort(updates.begin(), updates.end());
            double median = updates[updates.size() / 2];
            if (updates.size() % 2 == 0)
                median = 0.5 * (median + updates[updates.size() / 2 - 1]);
            double mean = 0.0;
            for (double u : updates) mean += u / static_cast<double>(updates.size());
            double var = 0.0;
            for (double u : updates) var += (u - mean) * (u - mean);
            double sd = updates.size() > 1
                            ? std::sqrt(var / static_cast<double>(updates.size() - 1))
                            : 0.0;
            csv << m << "," << name << "," << median << "," << sd << "," << repeats << ","
                << unconverged << "\n";
        }
    }
    if (!out_path.empty()) {
        auto f = open_out(out_path);
        f << csv.str();
    } else {
        std::cout << csv.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"staleness-adaptive asynchronous SGD toolkit"};
    app.require_subcommand(1);

    auto* run_cmd = app.add_subcommand("run", "execute an SGD run and write trace/summary");
    RunSpec spec;
    std::string alpha_shorthand, config_path, trace_path, summary_path, increments_path;
    std::string norm_hist_path, x0_arg, policy_file;
    double normalize_to = 0.0, clip_mult = 0.0, alpha_c_ref = 0.0;
    int64_t cutoff_arg = -1, batch_override = 0;
    bool estimate_momentum_flag = false;
    double loss_threshold_arg = std::numeric_limits<double>::quiet_NaN();
    run_cmd->add_option("--mode", spec.mode, "seq | sync | async-threaded | async-sim");
    run_cmd->add_option("--problem", spec.problem,
                        "quad-1d | quad:d,lmin,lmax,sigma | lsq:n,d,noise,batch[,seed] | "
                        "mlp:hidden,n,batch[,seed]");
    run_cmd->add_option("--policy", spec.policy, "policy spec, e.g. const:0.01");
    run_cmd->add_option("--policy-file", policy_file, "policy json file (kind/params/wrappers)");
    run_cmd->add_option("--alpha", alpha_shorthand, "shorthand for --policy const:<alpha>");
    run_cmd->add_option("--workers", spec.workers, "worker count");
    run_cmd->add_option("--steps", spec.steps, "total updates");
    run_cmd->add_option("--seed", spec.seed, "master seed");
    run_cmd->add_option("--stride", spec.stride, "loss sampling stride");
    run_cmd->add_option("--batch", batch_override, "per-worker batch size override");
    run_cmd->add_option("--delay", spec.delay,
                        "async-sim delay: model spec or event:compute_mean,apply[,gamma_shape]");
    run_cmd->add_option("--history-cap", spec.history_cap, "snapshot history cap");
    run_cmd->add_option("--x0", x0_arg, "comma-separated start point");
    run_cmd->add_option("--normalize-to", normalize_to,
                        "rescale so the histogram-weighted mean step equals this");
    run_cmd->add_option("--norm-hist", norm_hist_path, "histogram csv for --normalize-to");
    run_cmd->add_option("--clip", clip_mult, "cap steps at clip * alpha_c");
    run_cmd->add_option("--alpha-c", alpha_c_ref, "reference constant step for --clip");
    run_cmd->add_option("--cutoff", cutoff_arg, "skip updates with tau > cutoff");
    run_cmd->add_option("--loss-threshold", loss_threshold_arg, "record first crossing");
    run_cmd->add_flag("--stop-at-threshold", spec.stop_at_threshold, "stop at the crossing");
    run_cmd->add_flag("--record-increments", spec.record_increments,
                      "keep per-update parameter increments");
    run_cmd->add_flag("--estimate-momentum", estimate_momentum_flag,
                      "append an implicit-momentum estimate to the summary");
    run_cmd->add_option("--config", config_path, "re-run from an echoed config json");
    run_cmd->add_option("--trace", trace_path, "trace csv output");
    run_cmd->add_option("--summary", summary_path, "summary json output (stdout when absent)");
    run_cmd->add_option("--increments-out", increments_path, "increments csv output");

    auto* fit_cmd = app.add_subcommand("fit", "fit staleness models to a histogram");
    std::string fit_hist, fit_families = "all", fit_out;
    int64_t fit_workers = 0;
    fit_cmd->add_option("--hist", fit_hist, "histogram csv (tau,count)")->required();
    fit_cmd->add_option("--families", fit_families, "all or comma list");
    fit_cmd->add_option("--workers", fit_workers, "worker count (pins lambda = m^nu for cmp)");
    fit_cmd->add_option("--out,-o", fit_out, "output json (stdout when absent)");

    auto* bounds_cmd = app.add_subcommand("bounds", "convergence-time bound calculators");
    double b_c = 0, b_L = 0, b_M = 0, b_eps = 0, b_tau = 0, b_theta = 1.0, b_d0 = 0;
    std::string b_model, b_policy, b_out;
    bounds_cmd->add_option("--c", b_c, "strong convexity")->required();
    bounds_cmd->add_option("--L", b_L, "gradient Lipschitz")->required();
    bounds_cmd->add_option("--M", b_M, "second-moment bound")->required();
    bounds_cmd->add_option("--eps", b_eps, "target squared distance")->required();
    bounds_cmd->add_option("--tau-bar", b_tau, "expected staleness")->required();
    bounds_cmd->add_option("--theta", b_theta, "step factor in (0,2)");
    bounds_cmd->add_option("--d0", b_d0, "||x0 - x*||^2")->required();
    bounds_cmd->add_option("--model", b_model, "staleness model for the decaying bound");
    bounds_cmd->add_option("--policy", b_policy, "policy for the decaying bound");
    bounds_cmd->add_option("--out,-o", b_out, "output json");

    auto* analyze_cmd = app.add_subcommand("analyze", "drift and momentum analysis");
    analyze_cmd->require_subcommand(1);
    auto* drift_cmd =
        analyze_cmd->add_subcommand("drift", "expected-update drift coefficients");
    std::string d_model, d_policy, d_out;
    int64_t d_imax = 150;
    drift_cmd->add_option("--model", d_model, "staleness model")->required();
    drift_cmd->add_option("--policy", d_policy, "step policy")->required();
    drift_cmd->add_option("--imax", d_imax, "coefficient window");
    drift_cmd->add_option("--out,-o", d_out, "output json");
    auto* mom_cmd =
        analyze_cmd->add_subcommand("momentum", "implicit momentum from increments");
    std::vector<std::string> m_files;
    double m_warmup = 0.1;
    int m_maxlag = 12;
    std::string m_out;
    mom_cmd->add_option("--increments", m_files, "increments csvs (one per seed)")->required();
    mom_cmd->add_option("--warmup", m_warmup, "warmup fraction to discard");
    mom_cmd->add_option("--max-lag", m_maxlag, "autocovariance lags");
    mom_cmd->add_option("--out,-o", m_out, "output json");

    auto* sweep_cmd = app.add_subcommand(
        "sweep", "worker-count sweep: constant vs normalized adaptive policy");
    std::string s_workers, s_problem, s_out;
    int64_t s_repeats = 5, s_max_steps = 200000, s_pilot = 5000;
    double s_alpha_c = 0.01, s_threshold = 0.05, s_compute = 1.0, s_apply = 0.15;
    uint64_t s_seed = 1;
    sweep_cmd->add_option("--workers", s_workers, "comma list of worker counts")->required();
    sweep_cmd->add_option("--repeats", s_repeats, "seeds per configuration");
    sweep_cmd->add_option("--problem", s_problem, "lsq:... or mlp:...")->required();
    sweep_cmd->add_option("--alpha-c", s_alpha_c, "constant reference step");
    sweep_cmd->add_option("--threshold", s_threshold, "loss threshold");
    sweep_cmd->add_option("--max-steps", s_max_steps, "update budget per run");
    sweep_cmd->add_option("--pilot-steps", s_pilot, "pilot updates for normalization");
    sweep_cmd->add_option("--compute-mean", s_compute, "event-driven mean compute time");
    sweep_cmd->add_option("--apply-time", s_apply, "event-driven apply time");
    sweep_cmd->add_option("--seed", s_seed, "base seed");
    sweep_cmd->add_option("--out,-o", s_out, "output csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        json err{{"error", "usage"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    }

    try {
        if (run_cmd->parsed()) {
            if (!config_path.empty()) {
                auto f = open_in(config_path);
                json j = json::parse(f);
                if (j.contains("config")) j = j["config"];
                spec = spec_from_json(j);
            } else {
                if (batch_override > 0)
                    spec.problem = apply_batch_override(spec.problem, batch_override);
                if (!policy_file.empty()) {
                    auto pf = open_in(policy_file);
                    json pj = json::parse(pf);
                    spec.policy.clear();
                    spec.policy_json = {{"kind", pj.at("kind")}, {"params", pj.at("params")}};
                    if (pj.contains("wrappers") && !pj["wrappers"].is_null()) {
                        const json& w = pj["wrappers"];
                        if (w.contains("normalize_to") && !w["normalize_to"].is_null() &&
                            normalize_to <= 0.0)
                            normalize_to = w["normalize_to"].get<double>();
                        if (w.contains("clip_mult") && !w["clip_mult"].is_null())
                            clip_mult = w["clip_mult"].get<double>();
                        if (w.contains("cutoff") && !w["cutoff"].is_null())
                            cutoff_arg = w["cutoff"].get<int64_t>();
                    }
                } else if (!alpha_shorthand.empty()) {
                    if (!spec.policy.empty())
                        throw validation_error("give either --policy or --alpha, not both");
                    spec.policy = "const:" + alpha_shorthand;
                }
                if (spec.policy.empty() && spec.policy_json.is_null())
                    throw validation_error("run needs --policy, --policy-file or --alpha");
                if (!x0_arg.empty()) {
                    std::vector<double> x0;
                    for (const auto& v : split(x0_arg, ','))
                        x0.push_back(to_double(v, "--x0"));
                    spec.x0 = x0;
                }
                if (!std::isnan(loss_threshold_arg)) spec.loss_threshold = loss_threshold_arg;
                // wrapper order: normalize on the raw policy, then clip, then cutoff
                double ref = alpha_c_ref;
                if (normalize_to > 0.0) {
                    if (norm_hist_path.empty())
                        throw validation_error("--normalize-to needs --norm-hist");
                    auto hf = open_in(norm_hist_path);
                    auto hist = load_histogram_csv(hf);
                    StepPolicy pol = spec.policy.empty() ? policy_from_json(spec.policy_json)
                                                         : parse_policy(spec.policy, nullptr);
                    auto w = normalize(pol, hist, normalize_to);
                    spec.scale = w.scale;
                    if (ref <= 0.0) ref = normalize_to;
                }
                if (clip_mult > 0.0) {
                    if (ref <= 0.0)
                        throw validation_error("--clip needs --alpha-c or --normalize-to");
                    spec.clip_cap = clip_mult * ref;
                }
                if (cutoff_arg >= 0) spec.cutoff = cutoff_arg;
            }
            return cmd_run(spec, trace_path, summary_path, increments_path,
                           estimate_momentum_flag);
        }
        if (fit_cmd->parsed()) return cmd_fit(fit_hist, fit_families, fit_workers, fit_out);
        if (bounds_cmd->parsed())
            return cmd_bounds(b_c, b_L, b_M, b_eps, b_tau, b_theta, b_d0, b_model, b_policy,
                              b_out);
        if (analyze_cmd->parsed()) {
            if (drift_cmd->parsed()) return cmd_analyze_drift(d_model, d_policy, d_imax, d_out);
            return cmd_analyze_momentum(m_files, m_warmup, m_maxlag, m_out);
        }
        if (sweep_cmd->parsed())
            return cmd_sweep(s_workers, s_repeats, s_problem, s_alpha_c, s_threshold,
                             s_max_steps, s_pilot, s_compute, s_apply, s_seed, s_out);
    } catch (const validation_error& e) {
        json err{{"error", "validation"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const unsupported_error& e) {
        json err{{"error", "unsupported"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        json err{{"error", "numeric"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 3;
    }
    return 0;
}