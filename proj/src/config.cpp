#include "speedtrack/config.hpp"

#include "speedtrack/errors.hpp"
#include "speedtrack/io_formats.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

namespace speedtrack::config {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
    KeyValues kv;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        line = trim(line.substr(0, line.find('#')));
        ++line_no;
        pos = end + 1;
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError("expected 'key = value'", line_no);
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw FormatError("empty key", line_no);
        }
        for (char c : key) {
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
                throw FormatError("invalid character in key '" + std::string(key) + "'", line_no);
            }
        }
        kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
    }
    return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    return parse_key_values(io::read_text(path));
}

std::string format_key_values(const KeyValues& kv) {
    std::ostringstream os;
    for (const auto& [k, v] : kv) {
        os << k << " = " << v << '\n';
    }
    return os.str();
}

std::string env_name(std::string_view key) {
    std::string out = "SPEEDTRACK_";
    for (char c : key) {
        out += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return out;
}

std::optional<std::string> env_value(std::string_view key) {
    const char* v = std::getenv(env_name(key).c_str());
    if (!v) {
        return std::nullopt;
    }
    return std::string(v);
}

std::optional<std::string> lookup(std::string_view key, const KeyValues& file) {
    if (auto v = env_value(key)) {
        return v;
    }
    // Files may spell keys with either separator.
    std::string alt(key);
    for (char& c : alt) {
        c = c == '-' ? '_' : c;
    }
    for (const std::string& k : {std::string(key), alt}) {
        const auto it = file.find(k);
        if (it != file.end()) {
            return it->second;
        }
    }
    return std::nullopt;
}

}  // namespace speedtrack::config
