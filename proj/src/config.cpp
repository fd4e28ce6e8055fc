#include "ipcd/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ipcd {

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string strip_comment(const std::string& line) {
    // '#' starts a comment unless inside double quotes.
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

}  // namespace

ConfigDoc ConfigDoc::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
}

ConfigDoc ConfigDoc::parse_string(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config: unterminated section header at line " +
                                  std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            doc.sections_[section];  // keep empty sections visible
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected 'key = value' at line " + std::to_string(lineno));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: empty key at line " + std::to_string(lineno));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        doc.sections_[section][key] = value;
    }
    return doc;
}

const std::string* ConfigDoc::find(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    return &k->second;
}

bool ConfigDoc::has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
}

std::string ConfigDoc::get_string(const std::string& section, const std::string& key,
                                  const std::string& fallback) const {
    const std::string* v = find(section, key);
    return v ? *v : fallback;
}

double ConfigDoc::get_double(const std::string& section, const std::string& key,
                             double fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        double d = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: [" + section + "] " + key + " = '" + *v + "' is not a number");
    }
}

long ConfigDoc::get_int(const std::string& section, const std::string& key, long fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    try {
        size_t pos = 0;
        long d = std::stol(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: [" + section + "] " + key + " = '" + *v +
                          "' is not an integer");
    }
}

bool ConfigDoc::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("config: [" + section + "] " + key + " = '" + *v + "' is not a bool");
}

std::vector<double> ConfigDoc::get_doubles(const std::string& section, const std::string& key,
                                           const std::vector<double>& fallback) const {
    const std::string* v = find(section, key);
    if (!v) return fallback;
    std::vector<double> out;
    std::istringstream in(*v);
    std::string tok;
    while (in >> tok) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config: [" + section + "] " + key + " contains non-number '" +
                              tok + "'");
        }
    }
    return out;
}

void ConfigDoc::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

void ConfigDoc::set_double(const std::string& section, const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    sections_[section][key] = buf;
}

void ConfigDoc::set_int(const std::string& section, const std::string& key, long value) {
    sections_[section][key] = std::to_string(value);
}

std::string ConfigDoc::serialize() const {
    std::ostringstream out;
    for (const auto& [name, kv] : sections_) {
        if (!name.empty()) out << "[" << name << "]\n";
        for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
        out << "\n";
    }
    return out.str();
}

void ConfigDoc::save_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("config: cannot write '" + path + "'");
    out << serialize();
}

}  // namespace ipcd
