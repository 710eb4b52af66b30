#pragma once

#include "storyreel/story.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace storyreel {

std::string sha256_hex(std::string_view bytes);

std::string base64_encode(std::string_view bytes);
/// Throws Error on malformed input.
std::string base64_decode(std::string_view text);

/// Content-addressed store rooted at a project directory. Assets live at
/// `<root>/assets/<sha256>.<ext>` and are referenced by that relative path.
class AssetStore {
public:
    explicit AssetStore(std::filesystem::path project_dir) : root_(std::move(project_dir)) {}

    /// Stores bytes (idempotently) and returns their reference.
    AssetRef put(std::string_view bytes, std::string_view ext);
    bool exists(const AssetRef& ref) const;
    std::filesystem::path path_of(const AssetRef& ref) const;
    std::string read(const AssetRef& ref) const;

    AssetResolver resolver() const {
        return [this](const AssetRef& ref) { return exists(ref); };
    }

private:
    std::filesystem::path root_;
};

}  // namespace storyreel
