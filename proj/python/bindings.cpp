#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pimgpt/config.hpp"
#include "pimgpt/functional.hpp"
#include "pimgpt/mapper.hpp"
#include "pimgpt/numerics.hpp"
#include "pimgpt/report.hpp"

namespace py = pybind11;
using namespace pimgpt;

namespace {

py::dict model_to_dict(const GptModelConfig& m) {
    py::dict d;
    d["name"] = m.name;
    d["num_layers"] = m.num_layers;
    d["d_model"] = m.d_model;
    d["num_heads"] = m.num_heads;
    d["d_head"] = m.d_head;
    d["d_ffn"] = m.d_ffn;
    d["vocab_size"] = m.vocab_size;
    d["max_tokens"] = m.max_tokens;
    d["approx_params"] = m.approx_params();
    return d;
}

py::dict report_to_dict(const RunReport& r) {
    py::dict d;
    d["model"] = r.model;
    d["tokens"] = r.tokens;
    d["total_latency_s"] = r.total_latency_s;
    d["row_hit_rate"] = r.row_hit_rate;
    py::dict b;
    b["vmm"] = r.vmm_s;
    b["asic_arith"] = r.asic_s;
    b["transfer"] = r.transfer_s;
    b["kv_write"] = r.kv_s;
    b["refresh"] = r.refresh_s;
    b["idle"] = r.idle_s;
    d["breakdown_s"] = b;
    d["data_movement_bytes"] = r.data_movement_bytes;
    auto red = data_movement_reduction(r);
    d["data_movement_reduction"] = red ? py::object(py::float_(*red)) : py::object(py::none());
    py::dict e;
    e["total_j"] = r.energy.total;
    e["dram_background_j"] = r.energy.dram_background;
    e["dram_act_pre_j"] = r.energy.dram_act_pre;
    e["dram_read_j"] = r.energy.dram_read;
    e["dram_write_j"] = r.energy.dram_write;
    e["dram_refresh_j"] = r.energy.dram_refresh;
    e["pim_mac_j"] = r.energy.pim_mac;
    e["asic_j"] = r.energy.asic;
    d["energy"] = e;
    d["per_token_s"] = r.per_token_s;
    d["timing_violations"] = r.timing_violations;
    return d;
}

SystemConfig config_with(py::kwargs kw) {
    SystemConfig cfg;
    for (auto item : kw) {
        std::string key = py::cast<std::string>(item.first);
        double v = py::cast<double>(item.second);
        if (key == "channels") {
            cfg.dram.channels = static_cast<uint32_t>(v);
        } else if (key == "mac_width") {
            cfg.pim.mac_width = static_cast<uint32_t>(v);
        } else if (key == "pin_rate_gbps") {
            cfg.dram.pin_rate_gbps = v;
        } else if (key == "asic_clock_hz") {
            cfg.asic.clock_hz = v;
        } else if (key == "gb_bytes") {
            cfg.pim.gb_bytes = static_cast<uint32_t>(v);
        } else {
            throw ConfigError("unknown config override: " + key);
        }
    }
    cfg.validate();
    return cfg;
}

} // namespace

PYBIND11_MODULE(_pimgpt, m) {
    m.doc() = "Cycle-accurate simulator of a GDDR6 PIM GPT accelerator";

    m.def("model_catalog", [] {
        py::list out;
        for (const auto& mm : model_catalog()) out.append(model_to_dict(mm));
        return out;
    });

    m.def(
        "run",
        [](const std::string& model, uint64_t tokens, bool check_timing, py::kwargs kw) {
            RunOptions opt;
            opt.model = find_model(model);
            opt.tokens = tokens;
            opt.cfg = config_with(kw);
            opt.check_timing = check_timing;
            return report_to_dict(run(opt));
        },
        py::arg("model"), py::arg("tokens") = 64, py::arg("check_timing") = false);

    m.def(
        "sweep",
        [](const std::string& dim, const std::vector<double>& values, const std::string& model,
           uint64_t tokens) {
            SweepDim d;
            if (dim == "asic_freq") {
                d = SweepDim::asic_freq;
            } else if (dim == "pin_rate") {
                d = SweepDim::pin_rate;
            } else if (dim == "tokens") {
                d = SweepDim::tokens;
            } else if (dim == "mac_width") {
                d = SweepDim::mac_width;
            } else if (dim == "channels") {
                d = SweepDim::channels;
            } else {
                throw ConfigError("unknown sweep dimension: " + dim);
            }
            RunOptions base;
            base.model = find_model(model);
            base.tokens = tokens;
            SweepResult res = sweep(d, values, base);
            py::list out;
            for (const auto& row : res.rows) {
                py::dict rd;
                rd["value"] = row.value;
                rd["ok"] = row.ok;
                if (row.ok) {
                    rd["total_latency_s"] = row.report.total_latency_s;
                    rd["normalized_latency"] = row.normalized_latency;
                } else {
                    rd["error"] = row.error;
                }
                out.append(rd);
            }
            return out;
        },
        py::arg("dim"), py::arg("values"), py::arg("model"), py::arg("tokens") = 64);

    m.def("map_summary", [](const std::string& model, uint64_t tokens) {
        SystemConfig cfg;
        MemoryMap map = build_memory_map(find_model(model), cfg, static_cast<uint32_t>(tokens));
        py::dict d;
        d["banks"] = map.bank_count();
        d["placements"] = map.placements.size();
        d["reservations"] = map.reservations.size();
        uint64_t used = 0;
        for (uint64_t u : map.used_elems_per_bank) used = std::max(used, u);
        d["max_bank_elems_used"] = used;
        d["bank_capacity_elems"] = map.bank_capacity_elems();
        d["predicted_row_hit_mid"] = predicted_row_hit(map, tokens / 2);
        return d;
    });

    // BF16 functional model
    m.def("bf16_round", [](float x) { return Bf16(x).to_float(); });
    m.def("nr_divide",
          [](float a, float b) { return numerics::nr_divide(Bf16(a), Bf16(b)).to_float(); });
    m.def("fast_inv_sqrt", [](float x) { return numerics::fast_inv_sqrt(Bf16(x)).to_float(); });
    m.def("taylor_exp", [](float x) { return numerics::taylor_exp(Bf16(x)).to_float(); });
    m.def("taylor_tanh", [](float x) { return numerics::taylor_tanh(Bf16(x)).to_float(); });
    m.def("gelu", [](float x) { return numerics::gelu(Bf16(x)).to_float(); });
    m.def("softmax", [](const std::vector<float>& xs) {
        Bf16Vector v(xs.size());
        for (size_t i = 0; i < xs.size(); ++i) v[i] = Bf16(xs[i]);
        auto s = numerics::softmax(v);
        std::vector<float> out(s.size());
        for (size_t i = 0; i < s.size(); ++i) out[i] = s[i].to_float();
        return out;
    });
}
