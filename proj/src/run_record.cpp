#include "isocal/run_record.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "isocal/errors.hpp"
#include "isocal/text_format.hpp"

namespace isocal {

namespace {

constexpr std::string_view kFormatLine = "isocal-run 1";

double metric(const RunRecord& r, std::string_view key) {
    if (key == "accuracy") return r.accuracy;
    if (key == "perplexity") return r.perplexity;
    if (key == "i1") return r.i1;
    if (key == "i2") return r.i2;
    if (key == "seconds_per_epoch") return r.seconds_per_epoch;
    return 0.0;
}

}  // namespace

std::string_view method_label(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::cosreg: return "cosreg";
        case Method::spectrum_pol: return "spectrum-pol";
        case Method::spectrum_exp: return "spectrum-exp";
        case Method::flow_posthoc: return "flow-posthoc";
        case Method::flow_joint: return "flow-joint";
    }
    return "none";
}

std::optional<Method> parse_method(std::string_view label) {
    if (label == "flow") return Method::flow_posthoc;
    for (Method m : kAllMethods)
        if (method_label(m) == label) return m;
    return std::nullopt;
}

bool RunRecord::is_degenerate(std::string_view key) const {
    if (degenerate.contains(std::string(key))) return true;
    return !std::isfinite(metric(*this, key));
}

std::optional<std::string> RunRecord::extra_value(std::string_view key) const {
    for (const auto& [k, v] : extra)
        if (k == key) return v;
    return std::nullopt;
}

std::string serialize(const RunRecord& r) {
    std::ostringstream out;
    out << "format=" << kFormatLine << '\n';
    out << "method=" << method_label(r.method) << '\n';
    out << "seed=" << r.seed << '\n';
    out << "accuracy=" << format_exact(r.accuracy) << '\n';
    out << "perplexity=" << format_exact(r.perplexity) << '\n';
    out << "i1=" << format_exact(r.i1) << '\n';
    out << "i2=" << format_exact(r.i2) << '\n';
    out << "seconds_per_epoch=" << format_exact(r.seconds_per_epoch) << '\n';
    out << "degenerate=";
    bool first = true;
    for (const auto& k : r.degenerate) {
        out << (first ? "" : ",") << k;
        first = false;
    }
    out << '\n';
    for (const auto& [k, v] : r.extra) out << k << '=' << v << '\n';
    return out.str();
}

RunRecord parse_run_record(std::string_view text) {
    std::map<std::string, std::pair<std::string, std::size_t>, std::less<>> core;
    RunRecord r;
    std::size_t line_no = 0;
    static const std::set<std::string, std::less<>> core_keys = {
        "format", "method", "seed", "accuracy", "perplexity", "i1", "i2", "seconds_per_epoch", "degenerate"};

    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos || eq == 0) throw ParseError(line_no, "expected key=value");
        std::string key(line.substr(0, eq));
        std::string value(line.substr(eq + 1));
        if (core_keys.contains(key)) {
            if (core.contains(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
            core.emplace(key, std::make_pair(std::move(value), line_no));
        } else {
            r.extra.emplace_back(std::move(key), std::move(value));
        }
    }

    auto get = [&](const char* key) -> const std::pair<std::string, std::size_t>& {
        auto it = core.find(key);
        if (it == core.end()) throw ParseError(0, std::string("run record: missing key '") + key + "'");
        return it->second;
    };
    auto real = [&](const char* key) {
        const auto& [v, ln] = get(key);
        const auto d = parse_double(v);
        if (!d) throw ParseError(ln, std::string("malformed value for '") + key + "'");
        return *d;
    };

    if (const auto& [v, ln] = get("format"); v != kFormatLine)
        throw ParseError(ln, "unsupported run record format '" + v + "'");
    {
        const auto& [v, ln] = get("method");
        const auto m = parse_method(v);
        if (!m) throw ParseError(ln, "unknown method '" + v + "'");
        r.method = *m;
    }
    {
        const auto& [v, ln] = get("seed");
        const auto s = parse_uint(v);
        if (!s) throw ParseError(ln, "malformed seed");
        r.seed = *s;
    }
    r.accuracy = real("accuracy");
    r.perplexity = real("perplexity");
    r.i1 = real("i1");
    r.i2 = real("i2");
    r.seconds_per_epoch = real("seconds_per_epoch");
    if (auto it = core.find("degenerate"); it != core.end()) {
        std::string_view list = it->second.first;
        while (!list.empty()) {
            const std::size_t c = list.find(',');
            const auto item = list.substr(0, c);
            if (!item.empty()) r.degenerate.emplace(item);
            if (c == std::string_view::npos) break;
            list.remove_prefix(c + 1);
        }
    }
    return r;
}

void write_run_record(const RunRecord& r, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << serialize(r);
    if (!out) throw IoError("failed writing " + path.string());
}

RunRecord read_run_record(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_run_record(buf.str());
    } catch (const ParseError& e) {
        throw ParseError(0, path.filename().string() + ": " + e.what());
    }
}

std::vector<RunRecord> read_run_records(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".run") files.push_back(entry.path());
    if (files.empty()) throw IoError("no run records (*.run) in " + dir.string());
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(read_run_record(f));
    return out;
}

}  // namespace isocal
