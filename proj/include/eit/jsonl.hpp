#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include <json.hpp>

#include "eit/errors.hpp"

namespace eit {

using json = nlohmann::json;

// Calls `fn(line_number, object)` for every non-blank line. Line numbers are
// 1-based. Malformed JSON raises ParseError carrying the line number.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(std::size_t, const json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded())
            throw ParseError("malformed JSON in " + path.filename().string() + " line " +
                                 std::to_string(lineno),
                             lineno);
        fn(lineno, obj);
    }
}

class JsonlWriter {
public:
    explicit JsonlWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    }

    void write(const json& obj) {
        out_ << obj.dump() << '\n';
        if (!out_) throw IoError("write failed");
        ++count_;
    }

    std::size_t count() const { return count_; }

    void close() { out_.close(); }

private:
    std::ofstream out_;
    std::size_t count_ = 0;
};

}  // namespace eit
