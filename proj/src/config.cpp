#include "pimgpt/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

namespace pimgpt {

namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<double(const SystemConfig&)> get;
    std::function<void(SystemConfig&, double)> set;
};

// Single schema used by the parser, both serializers and the validator.
const std::vector<Field>& schema() {
    static const std::vector<Field> s = {
        {"timing", "tRCD_ns", [](const SystemConfig& c) { return c.timing.tRCD; },
         [](SystemConfig& c, double v) { c.timing.tRCD = v; }},
        {"timing", "tRP_ns", [](const SystemConfig& c) { return c.timing.tRP; },
         [](SystemConfig& c, double v) { c.timing.tRP = v; }},
        {"timing", "tCCD_ns", [](const SystemConfig& c) { return c.timing.tCCD; },
         [](SystemConfig& c, double v) { c.timing.tCCD = v; }},
        {"timing", "tWR_ns", [](const SystemConfig& c) { return c.timing.tWR; },
         [](SystemConfig& c, double v) { c.timing.tWR = v; }},
        {"timing", "tRFC_ns", [](const SystemConfig& c) { return c.timing.tRFC; },
         [](SystemConfig& c, double v) { c.timing.tRFC = v; }},
        {"timing", "tREFI_ns", [](const SystemConfig& c) { return c.timing.tREFI; },
         [](SystemConfig& c, double v) { c.timing.tREFI = v; }},
        {"timing", "tRAS_ns", [](const SystemConfig& c) { return c.timing.tRAS; },
         [](SystemConfig& c, double v) { c.timing.tRAS = v; }},
        {"idd", "IDD0_ma", [](const SystemConfig& c) { return c.idd.IDD0; },
         [](SystemConfig& c, double v) { c.idd.IDD0 = v; }},
        {"idd", "IDD2N_ma", [](const SystemConfig& c) { return c.idd.IDD2N; },
         [](SystemConfig& c, double v) { c.idd.IDD2N = v; }},
        {"idd", "IDD3N_ma", [](const SystemConfig& c) { return c.idd.IDD3N; },
         [](SystemConfig& c, double v) { c.idd.IDD3N = v; }},
        {"idd", "IDD4R_ma", [](const SystemConfig& c) { return c.idd.IDD4R; },
         [](SystemConfig& c, double v) { c.idd.IDD4R = v; }},
        {"idd", "IDD4W_ma", [](const SystemConfig& c) { return c.idd.IDD4W; },
         [](SystemConfig& c, double v) { c.idd.IDD4W = v; }},
        {"idd", "IDD5B_ma", [](const SystemConfig& c) { return c.idd.IDD5B; },
         [](SystemConfig& c, double v) { c.idd.IDD5B = v; }},
        {"idd", "VDD_v", [](const SystemConfig& c) { return c.idd.VDD; },
         [](SystemConfig& c, double v) { c.idd.VDD = v; }},
        {"dram", "channels", [](const SystemConfig& c) { return double(c.dram.channels); },
         [](SystemConfig& c, double v) { c.dram.channels = uint32_t(v); }},
        {"dram", "banks_per_channel", [](const SystemConfig& c) { return double(c.dram.banks_per_channel); },
         [](SystemConfig& c, double v) { c.dram.banks_per_channel = uint32_t(v); }},
        {"dram", "capacity_per_channel_bits", [](const SystemConfig& c) { return double(c.dram.capacity_per_channel); },
         [](SystemConfig& c, double v) { c.dram.capacity_per_channel = uint64_t(v); }},
        {"dram", "row_bytes", [](const SystemConfig& c) { return double(c.dram.row_bytes); },
         [](SystemConfig& c, double v) { c.dram.row_bytes = uint32_t(v); }},
        {"dram", "columns", [](const SystemConfig& c) { return double(c.dram.columns); },
         [](SystemConfig& c, double v) { c.dram.columns = uint32_t(v); }},
        {"dram", "pins_per_channel", [](const SystemConfig& c) { return double(c.dram.pins_per_channel); },
         [](SystemConfig& c, double v) { c.dram.pins_per_channel = uint32_t(v); }},
        {"dram", "pin_rate_gbps", [](const SystemConfig& c) { return c.dram.pin_rate_gbps; },
         [](SystemConfig& c, double v) { c.dram.pin_rate_gbps = v; }},
        {"dram", "dram_clock_hz", [](const SystemConfig& c) { return c.dram.dram_clock_hz; },
         [](SystemConfig& c, double v) { c.dram.dram_clock_hz = v; }},
        {"pim", "gb_bytes", [](const SystemConfig& c) { return double(c.pim.gb_bytes); },
         [](SystemConfig& c, double v) { c.pim.gb_bytes = uint32_t(v); }},
        {"pim", "mac_width", [](const SystemConfig& c) { return double(c.pim.mac_width); },
         [](SystemConfig& c, double v) { c.pim.mac_width = uint32_t(v); }},
        {"pim", "mac_units_per_bank", [](const SystemConfig& c) { return double(c.pim.mac_units_per_bank); },
         [](SystemConfig& c, double v) { c.pim.mac_units_per_bank = uint32_t(v); }},
        {"pim", "pim_clock_hz", [](const SystemConfig& c) { return c.pim.pim_clock_hz; },
         [](SystemConfig& c, double v) { c.pim.pim_clock_hz = v; }},
        {"pim", "mac_power_mw", [](const SystemConfig& c) { return c.pim.mac_power_mw; },
         [](SystemConfig& c, double v) { c.pim.mac_power_mw = v; }},
        {"asic", "clock_hz", [](const SystemConfig& c) { return c.asic.clock_hz; },
         [](SystemConfig& c, double v) { c.asic.clock_hz = v; }},
        {"asic", "sram_bytes", [](const SystemConfig& c) { return double(c.asic.sram_bytes); },
         [](SystemConfig& c, double v) { c.asic.sram_bytes = uint32_t(v); }},
        {"asic", "num_adders", [](const SystemConfig& c) { return double(c.asic.num_adders); },
         [](SystemConfig& c, double v) { c.asic.num_adders = uint32_t(v); }},
        {"asic", "num_multipliers", [](const SystemConfig& c) { return double(c.asic.num_multipliers); },
         [](SystemConfig& c, double v) { c.asic.num_multipliers = uint32_t(v); }},
        {"asic", "power_mw", [](const SystemConfig& c) { return c.asic.power_mw; },
         [](SystemConfig& c, double v) { c.asic.power_mw = v; }},
    };
    return s;
}

const Field* find_field(const std::string& section, const std::string& key) {
    for (const auto& f : schema()) {
        if (f.section == section && f.key == key) return &f;
    }
    return nullptr;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

void require(bool ok, const std::string& constraint) {
    if (!ok) throw ConfigError("config constraint violated: " + constraint);
}

} // namespace

void GptModelConfig::validate() const {
    require(num_layers > 0, "num_layers > 0");
    require(d_model == num_heads * d_head, "d_model = num_heads * d_head");
    require(d_ffn == 4 * d_model, "d_ffn = 4 * d_model");
    require(vocab_size > 0, "vocab_size > 0");
    require(max_tokens > 0, "max_tokens > 0");
}

void SystemConfig::validate() const {
    require(timing.tRCD > 0 && timing.tRP > 0 && timing.tCCD > 0 && timing.tWR > 0 &&
                timing.tRFC > 0 && timing.tREFI > 0 && timing.tRAS > 0,
            "all timing constraints strictly positive");
    require(timing.tRFC < timing.tREFI, "tRFC < tREFI");
    require(timing.tRAS >= timing.tRCD, "tRAS >= tRCD");
    require(idd.IDD4R > idd.IDD3N, "IDD4R > IDD3N");
    require(idd.IDD3N > idd.IDD2N, "IDD3N > IDD2N");
    require(idd.IDD4W > idd.IDD3N, "IDD4W > IDD3N");
    require(idd.VDD > 0, "VDD > 0");
    require(dram.channels >= 1, "channels >= 1");
    require(dram.banks_per_channel >= 1, "banks_per_channel >= 1");
    require(uint64_t(dram.row_bytes) * dram.columns * dram.banks_per_channel ==
                dram.capacity_per_channel / 8,
            "row_bytes * columns * banks_per_channel = capacity_per_channel/8");
    require(dram.row_bytes % 2 == 0, "row_bytes even (BF16 elements)");
    require(dram.pins_per_channel >= 1 && dram.pin_rate_gbps > 0, "positive channel interface");
    require(dram.dram_clock_hz > 0 && pim.pim_clock_hz > 0 && asic.clock_hz > 0,
            "positive clocks");
    require(pim.gb_bytes >= 2 * pim.mac_width, "gb_bytes >= 2 * mac_width");
    require((pim.mac_width & (pim.mac_width - 1)) == 0 && pim.mac_width > 0,
            "mac_width a power of two");
    require(pim.mac_units_per_bank >= 1, "mac_units_per_bank >= 1");
    require(asic.sram_bytes > 0 && asic.num_adders > 0 && asic.num_multipliers > 0 &&
                asic.power_mw > 0,
            "asic parameters positive");
    require(pim.mac_power_mw > 0, "mac_power_mw > 0");
}

double channel_bandwidth(const SystemConfig& cfg) {
    return cfg.dram.pins_per_channel * cfg.dram.pin_rate_gbps * 1e9 / 8.0;
}

SystemConfig parse_config_text(const std::string& text, const std::string& origin) {
    SystemConfig cfg;
    std::string body = text;
    size_t first = body.find_first_not_of(" \t\r\n");
    bool looks_json = first != std::string::npos && body[first] == '{';
    bool is_json = looks_json || (origin.size() > 5 && origin.substr(origin.size() - 5) == ".json");

    if (is_json) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(origin + ": JSON parse error: " + e.what());
        }
        for (auto& [section, obj] : j.items()) {
            if (!obj.is_object()) throw ConfigError(origin + ": section '" + section + "' is not an object");
            for (auto& [key, val] : obj.items()) {
                const Field* f = find_field(section, key);
                if (!f) throw ConfigError(origin + ": unknown key [" + section + "] " + key);
                if (!val.is_number()) throw ConfigError(origin + ": non-numeric value for " + key);
                f->set(cfg, val.get<double>());
            }
        }
        cfg.validate();
        return cfg;
    }

    std::istringstream in(body);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
            }
            section = trim(s.substr(1, s.size() - 2));
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        const Field* f = find_field(section, key);
        if (!f) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key [" + section +
                              "] " + key);
        }
        try {
            size_t used = 0;
            double v = std::stod(val, &used);
            if (used != val.size()) throw std::invalid_argument(val);
            f->set(cfg, v);
        } catch (const std::exception&) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad numeric value '" + val + "'");
        }
    }
    cfg.validate();
    return cfg;
}

SystemConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string serialize_config(const SystemConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    std::string current;
    for (const auto& f : schema()) {
        if (f.section != current) {
            if (!current.empty()) out << "\n";
            out << "[" << f.section << "]\n";
            current = f.section;
        }
        double v = f.get(cfg);
        if (v == std::floor(v) && std::fabs(v) < 1e15) {
            out << f.key << " = " << static_cast<long long>(v) << "\n";
        } else {
            out << f.key << " = " << v << "\n";
        }
    }
    return out.str();
}

std::string serialize_config_json(const SystemConfig& cfg) {
    nlohmann::json j;
    for (const auto& f : schema()) j[f.section][f.key] = f.get(cfg);
    return j.dump(2);
}

bool operator==(const TimingConstraints& a, const TimingConstraints& b) {
    return a.tRCD == b.tRCD && a.tRP == b.tRP && a.tCCD == b.tCCD && a.tWR == b.tWR &&
           a.tRFC == b.tRFC && a.tREFI == b.tREFI && a.tRAS == b.tRAS;
}
bool operator==(const CurrentProfile& a, const CurrentProfile& b) {
    return a.IDD0 == b.IDD0 && a.IDD2N == b.IDD2N && a.IDD3N == b.IDD3N && a.IDD4R == b.IDD4R &&
           a.IDD4W == b.IDD4W && a.IDD5B == b.IDD5B && a.VDD == b.VDD;
}
bool operator==(const DramGeometry& a, const DramGeometry& b) {
    return a.channels == b.channels && a.banks_per_channel == b.banks_per_channel &&
           a.capacity_per_channel == b.capacity_per_channel && a.row_bytes == b.row_bytes &&
           a.columns == b.columns && a.pins_per_channel == b.pins_per_channel &&
           a.pin_rate_gbps == b.pin_rate_gbps && a.dram_clock_hz == b.dram_clock_hz;
}
bool operator==(const PimConfig& a, const PimConfig& b) {
    return a.gb_bytes == b.gb_bytes && a.mac_width == b.mac_width &&
           a.mac_units_per_bank == b.mac_units_per_bank && a.pim_clock_hz == b.pim_clock_hz &&
           a.mac_power_mw == b.mac_power_mw;
}
bool operator==(const AsicConfig& a, const AsicConfig& b) {
    return a.clock_hz == b.clock_hz && a.sram_bytes == b.sram_bytes &&
           a.num_adders == b.num_adders && a.num_multipliers == b.num_multipliers &&
           a.power_mw == b.power_mw;
}
bool operator==(const SystemConfig& a, const SystemConfig& b) {
    return a.timing == b.timing && a.idd == b.idd && a.dram == b.dram && a.pim == b.pim &&
           a.asic == b.asic;
}

namespace {

GptModelConfig make_model(std::string name, uint32_t layers, uint32_t d_model, uint32_t heads,
                          uint32_t ctx, double published, std::string source) {
    GptModelConfig m;
    m.name = std::move(name);
    m.num_layers = layers;
    m.d_model = d_model;
    m.num_heads = heads;
    m.d_head = d_model / heads;
    m.d_ffn = 4 * d_model;
    m.vocab_size = 50257;
    m.max_tokens = ctx;
    m.published_params = published;
    m.param_source = std::move(source);
    m.validate();
    return m;
}

} // namespace

const std::vector<GptModelConfig>& model_catalog() {
    static const std::vector<GptModelConfig> catalog = {
        // GPT-2 family (Radford et al. 2019, Table 2).
        make_model("gpt2-small", 12, 768, 12, 1024, 124e6, "radford2019"),
        make_model("gpt2-medium", 24, 1024, 16, 1024, 355e6, "radford2019"),
        make_model("gpt2-large", 36, 1280, 20, 1024, 774e6, "radford2019"),
        make_model("gpt2-xl", 48, 1600, 25, 1024, 1558e6, "radford2019"),
        // GPT-3 family (Brown et al. 2020, Table 2.1).
        make_model("gpt3-small", 12, 768, 12, 2048, 125e6, "brown2020"),
        make_model("gpt3-medium", 24, 1024, 16, 2048, 350e6, "brown2020"),
        make_model("gpt3-large", 24, 1536, 16, 2048, 760e6, "brown2020"),
        // XL as a 1.15e9-parameter configuration; the 2048-wide alternate
        // below fits 8k-token KV reservations only at ~99% bank occupancy.
        make_model("gpt3-xl", 24, 1920, 24, 2048, 1.15e9, "1.15B variant"),
    };
    return catalog;
}

const std::vector<GptModelConfig>& model_alternates() {
    static const std::vector<GptModelConfig> alternates = {
        // Alternate XL at the published 1.3B size; the published 24 heads of
        // width 128 contradict d_model = heads * d_head, so 16 x 128 is used.
        make_model("gpt3-xl-1.3b", 24, 2048, 16, 2048, 1.3e9, "brown2020"),
    };
    return alternates;
}

const GptModelConfig& find_model(const std::string& name) {
    for (const auto& m : model_catalog()) {
        if (m.name == name) return m;
    }
    for (const auto& m : model_alternates()) {
        if (m.name == name) return m;
    }
    throw ConfigError("unknown model: " + name);
}

} // namespace pimgpt
