#include "pimgpt/compiler.hpp"
#include "pimgpt/config.hpp"
#include "pimgpt/engine.hpp"
#include "pimgpt/functional.hpp"
#include "pimgpt/mapper.hpp"
#include "pimgpt/numerics.hpp"
#include "pimgpt/report.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

using namespace pimgpt;

namespace {

// exit codes: 0 ok, 1 config error, 2 capacity error, 3 internal violation
constexpr int kExitConfig = 1;
constexpr int kExitCapacity = 2;
constexpr int kExitInternal = 3;

SystemConfig load_cfg(const std::string& path_flag) {
    std::string path = path_flag;
    if (path.empty()) {
        if (const char* env = std::getenv("PIMGPT_CONFIG")) path = env;
    }
    if (path.empty()) return SystemConfig{};
    return load_config(path);
}

GptModelConfig resolve_model(const std::string& name) { return find_model(name); }

void apply_overrides(SystemConfig& cfg, uint32_t channels, uint32_t mac_width, double asic_freq,
                     double pin_rate) {
    if (channels) cfg.dram.channels = channels;
    if (mac_width) cfg.pim.mac_width = mac_width;
    if (asic_freq > 0) cfg.asic.clock_hz = asic_freq;
    if (pin_rate > 0) cfg.dram.pin_rate_gbps = pin_rate;
    cfg.validate();
}

void write_out(const std::string& out_path, const std::string& body) {
    if (out_path.empty() || out_path == "-") {
        std::cout << body;
        return;
    }
    std::ofstream f(out_path);
    if (!f) throw ConfigError("cannot open output path: " + out_path);
    f << body;
}

int numerics_report(const std::string& out_path) {
    using namespace pimgpt::numerics;
    std::ostringstream o;
    o << "operation,cases,max_ulp_or_rel,mean_err,notes\n";
    {
        int32_t worst = 0;
        double sum = 0;
        uint64_t n = 0;
        for (uint32_t b = 0x0080; b < 0x7f80; ++b) {
            Bf16 d = Bf16::from_bits(static_cast<uint16_t>(b));
            Bf16 ref(1.0 / std::sqrt(double(d.to_float())));
            int32_t u = ulp_distance(fast_inv_sqrt(d), ref);
            worst = std::max(worst, u);
            sum += u;
            ++n;
        }
        o << "fast_inv_sqrt," << n << "," << worst << "," << sum / n
          << ",ULP vs wide 1/sqrt; exhaustive positive normals\n";
    }
    {
        int32_t worst = 0;
        double sum = 0;
        uint64_t n = 0;
        for (uint32_t b = 0x0080; b < 0x7f80; ++b) {
            Bf16 d = Bf16::from_bits(static_cast<uint16_t>(b));
            Bf16 ref(1.0 / double(d.to_float()));
            if (!ref.is_normal()) continue;
            int32_t u = ulp_distance(nr_reciprocal(d), ref);
            worst = std::max(worst, u);
            sum += u;
            ++n;
        }
        o << "nr_reciprocal," << n << "," << worst << "," << sum / n
          << ",ULP vs wide reciprocal; exhaustive positive normals\n";
    }
    {
        double worst = 0, sum = 0;
        uint64_t n = 0;
        for (uint32_t b = 0x8000; b < 0x10000; ++b) {
            Bf16 x = Bf16::from_bits(static_cast<uint16_t>(b));
            float xf = x.to_float();
            if (!(xf >= -12.0f && xf <= 0.0f)) continue;
            double ref = std::exp(double(xf));
            double err = std::fabs((taylor_exp(x).to_float() - ref) / ref);
            worst = std::max(worst, err);
            sum += err;
            ++n;
        }
        o << "taylor_exp," << n << "," << worst << "," << sum / n
          << ",relative vs wide exp on [-12;0]; reduction x=k*ln2+r (our choice)\n";
    }
    {
        double worst = 0, sum = 0;
        uint64_t n = 0;
        for (float x = -3.4f; x <= 3.4f; x += 0.007f) {
            Bf16 b(x);
            double ref = std::tanh(double(b.to_float()));
            if (std::fabs(ref) < 1e-3) continue;
            double err = std::fabs((taylor_tanh(b).to_float() - ref) / ref);
            worst = std::max(worst, err);
            sum += err;
            ++n;
        }
        o << "taylor_tanh," << n << "," << worst << "," << sum / n
          << ",relative vs wide tanh; Maclaurin |x|<=1 + exp identity (our choice)\n";
    }
    {
        std::mt19937 rng(7);
        std::uniform_real_distribution<float> dist(-4.0f, 4.0f);
        double worst = 0, sum = 0;
        uint64_t n = 0;
        auto ref_gelu = [](double x) {
            return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
        };
        for (int i = 0; i < 10000; ++i) {
            Bf16 x(dist(rng));
            double ref = ref_gelu(double(x.to_float()));
            double err = std::fabs(gelu(x).to_float() - ref) / std::max(std::fabs(ref), 1.0 / 16);
            worst = std::max(worst, err);
            sum += err;
            ++n;
        }
        o << "gelu," << n << "," << worst << "," << sum / n
          << ",relative with 2^-4 floor vs wide tanh-form gelu on U[-4;4]\n";
    }
    {
        std::mt19937 rng(11);
        std::normal_distribution<float> dist(0.0f, 1.0f);
        double worst = 0, sum = 0;
        uint64_t n = 0;
        for (int trial = 0; trial < 625; ++trial) {
            Bf16Vector v(16);
            for (auto& x : v) x = Bf16(dist(rng));
            auto got = softmax(v);
            double m = -1e30;
            for (auto& x : v) m = std::max(m, double(x.to_float()));
            double denom = 0;
            std::vector<double> e(16);
            for (int i = 0; i < 16; ++i) {
                e[i] = std::exp(double(v[i].to_float()) - m);
                denom += e[i];
            }
            for (int i = 0; i < 16; ++i) {
                double err = std::fabs((got[i].to_float() - e[i] / denom) / (e[i] / denom));
                worst = std::max(worst, err);
                sum += err;
                ++n;
            }
        }
        o << "softmax," << n << "," << worst << "," << sum / n
          << ",relative vs wide softmax; N(0;1) scores\n";
    }
    write_out(out_path, o.str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"pimgpt: cycle-accurate simulator of a GDDR6 process-in-memory GPT accelerator"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "config file (key=value or JSON)");

    // run
    auto* cmd_run = app.add_subcommand("run", "simulate token generation for one model");
    std::string model_name = "gpt3-small";
    uint64_t tokens = 1024;
    std::string out_path, format = "json", trace_path;
    bool energy_detail = false, check_timing = false;
    uint32_t ov_channels = 0, ov_mac = 0;
    double ov_asic = 0, ov_pin = 0;
    cmd_run->add_option("--model", model_name, "catalog model name");
    cmd_run->add_option("--tokens", tokens, "tokens to generate");
    cmd_run->add_option("--out", out_path, "output path (default stdout)");
    cmd_run->add_option("--format", format, "json or csv");
    cmd_run->add_option("--trace", trace_path, "per-event trace CSV path");
    cmd_run->add_flag("--energy-detail", energy_detail, "include formula notes");
    cmd_run->add_flag("--check-timing", check_timing, "attach the timing checker");
    cmd_run->add_option("--channels", ov_channels, "override channel count");
    cmd_run->add_option("--mac-width", ov_mac, "override MAC width");
    cmd_run->add_option("--asic-freq", ov_asic, "override ASIC clock (Hz)");
    cmd_run->add_option("--pin-rate", ov_pin, "override pin rate (Gb/s)");

    // sweep
    auto* cmd_sweep = app.add_subcommand("sweep", "run a sensitivity sweep");
    std::string dim_name = "asic_freq";
    std::vector<double> values;
    cmd_sweep->add_option("--dim", dim_name,
                          "asic_freq | pin_rate | tokens | mac_width | channels");
    cmd_sweep->add_option("--values", values, "sweep values (first = baseline)")->required();
    cmd_sweep->add_option("--model", model_name, "catalog model name");
    cmd_sweep->add_option("--tokens", tokens, "tokens per run");
    cmd_sweep->add_option("--out", out_path, "output path");
    cmd_sweep->add_option("--format", format, "json or csv");

    // map dump
    auto* cmd_map = app.add_subcommand("map", "memory map inspection");
    auto* cmd_map_dump = cmd_map->add_subcommand("dump", "emit the MemoryMap as JSON");
    cmd_map_dump->add_option("--model", model_name, "catalog model name");
    cmd_map_dump->add_option("--tokens", tokens, "KV reservation capacity");
    cmd_map_dump->add_option("--out", out_path, "output path");

    // compile dump
    auto* cmd_compile = app.add_subcommand("compile", "compile one token step");
    bool compile_dump = false;
    uint64_t token_position = 1;
    cmd_compile->add_flag("--dump", compile_dump, "emit the instruction listing");
    cmd_compile->add_option("--model", model_name, "catalog model name");
    cmd_compile->add_option("--token-position", token_position, "decode step (1-based)");
    cmd_compile->add_option("--tokens", tokens, "KV reservation capacity");
    cmd_compile->add_option("--out", out_path, "output path");

    // numerics report
    auto* cmd_num = app.add_subcommand("numerics", "BF16 functional model tools");
    auto* cmd_num_rep = cmd_num->add_subcommand("report", "ULP/relative error tables");
    cmd_num_rep->add_option("--out", out_path, "output path");

    // validate
    auto* cmd_val = app.add_subcommand("validate", "validate config and mapping invariants");
    cmd_val->add_option("--model", model_name, "catalog model name");
    cmd_val->add_option("--tokens", tokens, "KV reservation capacity");

    CLI11_PARSE(app, argc, argv);

    try {
        SystemConfig cfg = load_cfg(config_path);

        if (*cmd_run) {
            apply_overrides(cfg, ov_channels, ov_mac, ov_asic, ov_pin);
            RunOptions opt;
            opt.model = resolve_model(model_name);
            opt.tokens = tokens;
            opt.cfg = cfg;
            opt.check_timing = check_timing;
            opt.trace_path = trace_path;
            opt.energy_detail = energy_detail;
            RunReport r = run(opt);
            write_out(out_path, format == "csv" ? report_csv(r) : report_json(r, energy_detail));
            if (r.timing_violations) {
                std::cerr << "timing violations: " << r.timing_violations << " ("
                          << r.first_violation << ")\n";
                return kExitInternal;
            }
            return 0;
        }
        if (*cmd_sweep) {
            SweepDim dim;
            if (dim_name == "asic_freq") {
                dim = SweepDim::asic_freq;
            } else if (dim_name == "pin_rate") {
                dim = SweepDim::pin_rate;
            } else if (dim_name == "tokens") {
                dim = SweepDim::tokens;
            } else if (dim_name == "mac_width") {
                dim = SweepDim::mac_width;
            } else if (dim_name == "channels") {
                dim = SweepDim::channels;
            } else {
                throw ConfigError("unknown sweep dimension: " + dim_name);
            }
            RunOptions base;
            base.model = resolve_model(model_name);
            base.tokens = tokens;
            base.cfg = cfg;
            SweepResult res = sweep(dim, values, base);
            write_out(out_path, format == "csv" ? sweep_csv(res) : sweep_json(res));
            return 0;
        }
        if (*cmd_map) {
            GptModelConfig m = resolve_model(model_name);
            MemoryMap map = build_memory_map(m, cfg, static_cast<uint32_t>(tokens));
            write_out(out_path, memory_map_json(map));
            return 0;
        }
        if (*cmd_compile) {
            GptModelConfig m = resolve_model(model_name);
            MemoryMap map = build_memory_map(m, cfg, static_cast<uint32_t>(tokens));
            auto graph = build_graph(m, token_position);
            auto stream = compile(graph, map, cfg);
            if (compile_dump) write_out(out_path, dump_stream(stream));
            return 0;
        }
        if (*cmd_num) {
            return numerics_report(out_path);
        }
        if (*cmd_val) {
            cfg.validate();
            GptModelConfig m = resolve_model(model_name);
            MemoryMap map = build_memory_map(m, cfg, static_cast<uint32_t>(tokens));
            // spot-check mapping invariants
            for (const auto& p : map.placements) {
                uint64_t total = 0;
                for (const auto& run : p.segments) total += run.elems;
                if (total != p.total_elems()) {
                    throw CapacityError("coverage mismatch in " + p.id());
                }
            }
            std::cout << "config ok; " << model_name << " maps onto "
                      << map.bank_count() << " banks; predicted row-hit at mid-sequence "
                      << predicted_row_hit(map, tokens / 2) << "\n";
            return 0;
        }
    } catch (const CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const TimingViolation& e) {
        std::cerr << "internal constraint violation: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return 0;
}
