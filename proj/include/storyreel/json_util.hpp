#pragma once

#include "storyreel/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace storyreel {

using json = nlohmann::json;

inline std::string join_path(std::string_view where, std::string_view key) {
    if (where.empty()) {
        return std::string(key);
    }
    return std::string(where) + "." + std::string(key);
}

/// Reads `j[key]` as T, turning absence or type mismatch into a SchemaError
/// that names the full field path.
template <typename T>
T get_field(const json& j, std::string_view key, std::string_view where = {}) {
    const std::string path = join_path(where, key);
    if (!j.is_object()) {
        throw SchemaError(std::string(where), "expected an object");
    }
    auto it = j.find(std::string(key));
    if (it == j.end()) {
        throw SchemaError(path, "missing field");
    }
    try {
        return it->template get<T>();
    } catch (const SchemaError& e) {
        throw e.under(path);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path, e.what());
    }
}

/// Reads an array field element by element so nested schema errors carry
/// the element index, e.g. `shots[3].description`.
template <typename T>
std::vector<T> get_array(const json& j, std::string_view key, std::string_view where = {}) {
    const std::string path = join_path(where, key);
    const json arr = get_field<json>(j, key, where);
    if (!arr.is_array()) {
        throw SchemaError(path, "expected an array");
    }
    std::vector<T> out;
    out.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string item = path + "[" + std::to_string(i) + "]";
        try {
            out.push_back(arr[i].template get<T>());
        } catch (const SchemaError& e) {
            throw e.under(item);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(item, e.what());
        }
    }
    return out;
}

template <typename T>
T get_field_or(const json& j, std::string_view key, T fallback, std::string_view where = {}) {
    if (!j.is_object() || !j.contains(std::string(key)) || j.at(std::string(key)).is_null()) {
        return fallback;
    }
    return get_field<T>(j, key, where);
}

/// Absent or null reads as nullopt.
template <typename T>
std::optional<T> get_optional(const json& j, std::string_view key, std::string_view where = {}) {
    if (!j.is_object() || !j.contains(std::string(key)) || j.at(std::string(key)).is_null()) {
        return std::nullopt;
    }
    return get_field<T>(j, key, where);
}

template <typename T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

/// Canonical byte form for every persisted document: sorted keys, two-space
/// indent, trailing newline.
inline std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);
std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so a killed process never
/// leaves a half-written artifact behind.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace storyreel
