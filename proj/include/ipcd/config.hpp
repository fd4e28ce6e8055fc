#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipcd {

// Errors thrown across the library. The CLI maps UsageError to exit 1 and
// everything else derived from DataError to exit 2.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : DataError {
    using DataError::DataError;
};
struct ConfigError : DataError {
    using DataError::DataError;
};
struct NumericalError : DataError {
    using DataError::DataError;
};
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat-section key-value configuration document:
//
//   # comment
//   [section]
//   key = value          # strings, numbers, bools
//   list = 0.1 0.2 0.3   # whitespace-separated numbers
//
// One document drives every CLI subcommand; defaults live in code and any
// key present here overrides them.
class ConfigDoc {
  public:
    ConfigDoc() = default;

    static ConfigDoc parse_file(const std::string& path);
    static ConfigDoc parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    long get_int(const std::string& section, const std::string& key, long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    const std::vector<double>& fallback) const;

    void set(const std::string& section, const std::string& key, const std::string& value);
    void set_double(const std::string& section, const std::string& key, double value);
    void set_int(const std::string& section, const std::string& key, long value);

    std::string serialize() const;
    void save_file(const std::string& path) const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

  private:
    const std::string* find(const std::string& section, const std::string& key) const;

    std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace ipcd
