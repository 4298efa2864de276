#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fbnlg {

/// Hex sha1 of "blob <size>\0" followed by the bytes, as git computes it.
std::string git_blob_hash(std::string_view bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

/// Hash over the sorted (relative path, blob hash) pairs of every regular
/// file below `dir`.
std::string git_tree_hash(const std::filesystem::path& dir);

}  // namespace fbnlg
