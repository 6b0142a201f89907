#pragma once

// Artifact plumbing: key=value config files with [section] headers, CSV
// emission, and the flat binary field format ("WPF1": header with dims and
// grid metadata, payload of row-major float64 pairs for complex samples).

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wavepot/core.hpp"

namespace wavepot {

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// Flat key=value configuration with [section] headers. Keys are stored as
// "section.key"; keys before any header live in the "" section as "key".
class Config {
public:
    Config() = default;

    static Config parse_text(const std::string& text) {
        Config c;
        std::istringstream in(text);
        std::string line, section;
        while (std::getline(in, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[' && line.back() == ']') {
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) throw Error("config: bad line: " + line);
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            c.kv_[section.empty() ? key : section + "." + key] = val;
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("config: cannot open " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : it->second;
    }
    std::string require(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw Error("config: missing key " + key);
        return it->second;
    }
    double get_double(const std::string& key, double dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : std::stod(it->second);
    }
    int get_int(const std::string& key, int dflt) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? dflt : std::stoi(it->second);
    }
    std::vector<double> get_list(const std::string& key, const std::vector<double>& dflt) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return dflt;
        return parse_double_list(it->second);
    }
    void set(const std::string& key, const std::string& val) { kv_[key] = val; }

    static std::vector<double> parse_double_list(const std::string& s) {
        std::vector<double> out;
        std::string item;
        std::istringstream in(s);
        while (std::getline(in, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(std::stod(item));
        }
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

    // Deterministic hash of the full key/value content (cache keying).
    std::uint64_t hash() const {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& [k, v] : kv_) {
            for (char c : k + "=" + v + ";") {
                h ^= static_cast<unsigned char>(c);
                h *= 1099511628211ull;
            }
        }
        return h;
    }

private:
    std::map<std::string, std::string> kv_;
};

// CSV writer with fixed high-precision formatting so that artifact files are
// byte-reproducible across runs.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        if (!out_) throw Error("csv: cannot open " + path);
    }
    void header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
        out_ << "\n";
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
    }
    static std::string num(double x) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.12g", x);
        return buf;
    }

private:
    std::ofstream out_;
};

// Binary field container. Layout:
//   magic "WPF1" | int32 rank | int32 dims[rank] | float64 meta[4] (dt, h, t0, x0-extra)
//   | payload: row-major complex128 (re, im per sample).
struct FieldBlob {
    std::vector<int> dims;
    double dt = 0.0, h = 0.0, t0 = 0.0, extra = 0.0;
    std::vector<cplx> data;

    std::size_t count() const {
        std::size_t n = 1;
        for (int d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error("blob: cannot open " + path);
        out.write("WPF1", 4);
        std::int32_t rank = static_cast<std::int32_t>(dims.size());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        for (int d : dims) {
            std::int32_t v = d;
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
        double meta[4] = {dt, h, t0, extra};
        out.write(reinterpret_cast<const char*>(meta), sizeof meta);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(cplx)));
        if (!out) throw Error("blob: write failed " + path);
    }

    static FieldBlob load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("blob: cannot open " + path);
        char magic[4];
        in.read(magic, 4);
        if (std::memcmp(magic, "WPF1", 4) != 0) throw Error("blob: bad magic in " + path);
        std::int32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        if (rank < 1 || rank > 4) throw Error("blob: bad rank");
        FieldBlob b;
        b.dims.resize(rank);
        for (int i = 0; i < rank; ++i) {
            std::int32_t v = 0;
            in.read(reinterpret_cast<char*>(&v), 4);
            b.dims[i] = v;
        }
        double meta[4];
        in.read(reinterpret_cast<char*>(meta), sizeof meta);
        b.dt = meta[0]; b.h = meta[1]; b.t0 = meta[2]; b.extra = meta[3];
        b.data.resize(b.count());
        in.read(reinterpret_cast<char*>(b.data.data()),
                static_cast<std::streamsize>(b.data.size() * sizeof(cplx)));
        if (!in) throw Error("blob: truncated payload in " + path);
        return b;
    }
};

}  // namespace wavepot
