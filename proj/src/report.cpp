#include "pimgpt/report.hpp"

#include "pimgpt/compiler.hpp"
#include "pimgpt/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace pimgpt {

RunReport run(const RunOptions& opt) {
    opt.cfg.validate();
    opt.model.validate();
    // a zero-token run still maps (one reserved token slot) and reports n/a
    // for the movement ratio
    uint32_t reserve = static_cast<uint32_t>(std::max<uint64_t>(opt.tokens, 1));
    MemoryMap map = build_memory_map(opt.model, opt.cfg, reserve);
    Engine eng(map, opt.cfg);
    TimingChecker checker(opt.cfg, map.bank_count());
    EventLog log;
    if (opt.check_timing) eng.add_sink(&checker);
    if (!opt.trace_path.empty()) eng.add_sink(&log);

    for (uint64_t t = 1; t <= opt.tokens; ++t) {
        auto graph = build_graph(opt.model, t);
        auto stream = compile(graph, map, opt.cfg);
        eng.execute(stream);
        eng.mark_token();
    }
    SimTrace tr = eng.finish();
    const SimStats& st = tr.stats;

    if (!opt.trace_path.empty()) {
        // dump sorted by clock; per-bank refresh catch-up can emit past times
        std::stable_sort(log.events.begin(), log.events.end(),
                         [](const TraceEvent& a, const TraceEvent& b) { return a.t < b.t; });
        std::ofstream out(opt.trace_path);
        out << log.to_csv();
    }

    RunReport r;
    r.model = opt.model.name;
    r.tokens = opt.tokens;
    r.total_latency_s = double(st.final_ps) * 1e-12;
    r.per_token_s.reserve(st.token_ps.size());
    for (ps_t p : st.token_ps) r.per_token_s.push_back(double(p) * 1e-12);
    for (ps_t p : st.token_refresh_ps) r.per_token_refresh_s.push_back(double(p) * 1e-12);
    r.vmm_s = double(st.t_vmm) * 1e-12;
    r.asic_s = double(st.t_asic) * 1e-12;
    r.transfer_s = double(st.t_transfer) * 1e-12;
    r.kv_s = double(st.t_kv) * 1e-12;
    r.refresh_s = double(st.t_refresh) * 1e-12;
    r.idle_s = double(st.t_idle) * 1e-12;
    r.row_hit_rate = st.row_hit_rate();
    r.data_movement_bytes = st.bus_bytes;
    r.baseline_bytes = st.baseline_bytes;
    r.activates = st.activates;
    r.col_accesses = st.col_accesses;
    r.channel_refreshes = st.refreshes / opt.cfg.dram.banks_per_channel;
    r.asic_busy_s = double(st.asic_busy_ps) * 1e-12;
    r.mac_busy_s = double(st.mac_busy_ps) * 1e-12;
    r.energy = accumulate(st, opt.cfg);
    r.timing_violations = checker.violations();
    r.first_violation = checker.first_violation();
    return r;
}

std::optional<double> data_movement_reduction(const RunReport& r) {
    if (r.tokens == 0 || r.data_movement_bytes == 0) return std::nullopt;
    return double(r.baseline_bytes) / double(r.data_movement_bytes);
}

const char* sweep_dim_name(SweepDim d) {
    switch (d) {
        case SweepDim::asic_freq: return "asic_freq";
        case SweepDim::pin_rate: return "pin_rate";
        case SweepDim::tokens: return "tokens";
        case SweepDim::mac_width: return "mac_width";
        case SweepDim::channels: return "channels";
    }
    return "?";
}

SweepResult sweep(SweepDim dim, const std::vector<double>& values, const RunOptions& base,
                  unsigned parallelism) {
    if (values.empty()) throw ConfigError("sweep: no values given");
    SweepResult res;
    res.dim = dim;
    res.model = base.model.name;
    res.rows.resize(values.size());

    auto run_row = [&](size_t i) {
        SweepRow row;
        row.value = values[i];
        RunOptions opt = base;
        try {
            switch (dim) {
                case SweepDim::asic_freq:
                    opt.cfg.asic.clock_hz = values[i];
                    break;
                case SweepDim::pin_rate:
                    opt.cfg.dram.pin_rate_gbps = values[i];
                    break;
                case SweepDim::tokens:
                    opt.tokens = static_cast<uint64_t>(values[i]);
                    break;
                case SweepDim::mac_width:
                    opt.cfg.pim.mac_width = static_cast<uint32_t>(values[i]);
                    break;
                case SweepDim::channels:
                    opt.cfg.dram.channels = static_cast<uint32_t>(values[i]);
                    break;
            }
            opt.cfg.validate();
            row.report = run(opt);
            row.ok = true;
        } catch (const std::exception& e) {
            row.ok = false;
            row.error = e.what();
        }
        return row;
    };

    unsigned hw = parallelism ? parallelism : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::future<SweepRow>> futs(values.size());
    size_t next = 0;
    while (next < values.size()) {
        size_t batch = std::min<size_t>(hw, values.size() - next);
        for (size_t k = 0; k < batch; ++k) {
            futs[next + k] = std::async(std::launch::async, run_row, next + k);
        }
        for (size_t k = 0; k < batch; ++k) res.rows[next + k] = futs[next + k].get();
        next += batch;
    }
    double baseline = 0;
    for (auto& row : res.rows) {
        if (row.ok) {
            baseline = row.report.total_latency_s;
            break;
        }
    }
    for (auto& row : res.rows) {
        if (row.ok && baseline > 0) row.normalized_latency = row.report.total_latency_s / baseline;
    }
    return res;
}

namespace {

nlohmann::json report_to_json(const RunReport& r, bool energy_detail) {
    nlohmann::json j;
    j["model"] = r.model;
    j["tokens"] = r.tokens;
    j["total_latency_s"] = r.total_latency_s;
    j["row_hit_rate"] = r.row_hit_rate;
    j["breakdown_s"] = {{"vmm", r.vmm_s},         {"asic_arith", r.asic_s},
                        {"transfer", r.transfer_s}, {"kv_write", r.kv_s},
                        {"refresh", r.refresh_s},   {"idle", r.idle_s}};
    j["data_movement_bytes"] = r.data_movement_bytes;
    j["baseline_bytes"] = r.baseline_bytes;
    auto red = data_movement_reduction(r);
    if (red) {
        j["data_movement_reduction"] = *red;
    } else {
        j["data_movement_reduction"] = "n/a";
    }
    j["activates"] = r.activates;
    j["col_accesses"] = r.col_accesses;
    j["channel_refreshes"] = r.channel_refreshes;
    j["asic_busy_s"] = r.asic_busy_s;
    j["mac_busy_s"] = r.mac_busy_s;
    j["timing_violations"] = r.timing_violations;
    if (!r.first_violation.empty()) j["first_violation"] = r.first_violation;
    nlohmann::json e;
    e["total_j"] = r.energy.total;
    e["dram_background_j"] = r.energy.dram_background;
    e["dram_act_pre_j"] = r.energy.dram_act_pre;
    e["dram_read_j"] = r.energy.dram_read;
    e["dram_write_j"] = r.energy.dram_write;
    e["dram_refresh_j"] = r.energy.dram_refresh;
    e["pim_mac_j"] = r.energy.pim_mac;
    e["asic_j"] = r.energy.asic;
    if (energy_detail) e["formulas"] = EnergyReport::formula_notes();
    j["energy"] = std::move(e);
    j["per_token_s"] = r.per_token_s;
    j["per_token_refresh_s"] = r.per_token_refresh_s;
    return j;
}

} // namespace

std::string report_json(const RunReport& r, bool energy_detail) {
    return report_to_json(r, energy_detail).dump(2);
}

std::string report_csv(const RunReport& r) {
    std::ostringstream o;
    o.precision(12);
    o << "metric,value\n";
    o << "model," << r.model << "\n";
    o << "tokens," << r.tokens << "\n";
    o << "total_latency_s," << r.total_latency_s << "\n";
    o << "row_hit_rate," << r.row_hit_rate << "\n";
    o << "vmm_s," << r.vmm_s << "\n";
    o << "asic_arith_s," << r.asic_s << "\n";
    o << "transfer_s," << r.transfer_s << "\n";
    o << "kv_write_s," << r.kv_s << "\n";
    o << "refresh_s," << r.refresh_s << "\n";
    o << "idle_s," << r.idle_s << "\n";
    o << "data_movement_bytes," << r.data_movement_bytes << "\n";
    auto red = data_movement_reduction(r);
    o << "data_movement_reduction," << (red ? std::to_string(*red) : std::string("n/a")) << "\n";
    o << "energy_total_j," << r.energy.total << "\n";
    o << "energy_dram_background_j," << r.energy.dram_background << "\n";
    o << "energy_dram_act_pre_j," << r.energy.dram_act_pre << "\n";
    o << "energy_dram_read_j," << r.energy.dram_read << "\n";
    o << "energy_dram_write_j," << r.energy.dram_write << "\n";
    o << "energy_dram_refresh_j," << r.energy.dram_refresh << "\n";
    o << "energy_pim_mac_j," << r.energy.pim_mac << "\n";
    o << "energy_asic_j," << r.energy.asic << "\n";
    o << "timing_violations," << r.timing_violations << "\n";
    return o.str();
}

std::string sweep_json(const SweepResult& s) {
    nlohmann::json j;
    j["dimension"] = sweep_dim_name(s.dim);
    j["model"] = s.model;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : s.rows) {
        nlohmann::json e;
        e["value"] = row.value;
        if (row.ok) {
            e["total_latency_s"] = row.report.total_latency_s;
            e["normalized_latency"] = row.normalized_latency;
            e["row_hit_rate"] = row.report.row_hit_rate;
            e["energy_total_j"] = row.report.energy.total;
        } else {
            e["error"] = row.error;
        }
        rows.push_back(std::move(e));
    }
    j["rows"] = std::move(rows);
    return j.dump(2);
}

std::string sweep_csv(const SweepResult& s) {
    std::ostringstream o;
    o.precision(12);
    o << "dimension,value,total_latency_s,normalized_latency,row_hit_rate,energy_total_j,error\n";
    for (const auto& row : s.rows) {
        o << sweep_dim_name(s.dim) << "," << row.value << ",";
        if (row.ok) {
            o << row.report.total_latency_s << "," << row.normalized_latency << ","
              << row.report.row_hit_rate << "," << row.report.energy.total << ",";
        } else {
            o << ",,,," << row.error;
        }
        o << "\n";
    }
    return o.str();
}

} // namespace pimgpt
