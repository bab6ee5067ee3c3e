// Minimal flat-section key-value config reader ([section] headers, key =
// value lines, # comments) plus the run manifest every CLI run writes.

#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ttv {

struct ConfigError : std::runtime_error {
    ConfigError(int line, const std::string& what)
        : std::runtime_error("config line " + std::to_string(line) + ": " + what), line(line) {}
    explicit ConfigError(const std::string& what) : std::runtime_error(what), line(0) {}
    int line;
};

class Config {
  public:
    static Config parse(const std::string& text);
    static Config parse_file(const std::string& path);

    bool has(const std::string& dotted_key) const;
    // Throws ConfigError naming the missing field.
    const std::string& require(const std::string& dotted_key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_int(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    double require_double(const std::string& key) const;
    long require_int(const std::string& key) const;

    // Comma-separated list of numbers.
    std::vector<double> get_doubles(const std::string& key) const;

    const std::string& text() const { return raw_; }

  private:
    std::map<std::string, std::string> values_;
    std::string raw_;
};

struct RunManifest {
    std::string subcommand;
    std::string config_path;
    std::string config_echo;
    uint64_t seed = 0;
    std::string out_dir;
    std::string version;

    // JSON without wall-clock fields: reruns reproduce outputs byte-exactly.
    void write(const std::string& path) const;
};

extern const char* kToolkitVersion;

}  // namespace ttv
