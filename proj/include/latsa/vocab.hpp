#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace latsa {

/// Token <-> id map. Ids 0..2 are always <unk>, <s>, </s>.
class Vocab {
public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::size_t kBos = 1;
  static constexpr std::size_t kEos = 2;

  Vocab();

  /// Adds tokens seen at least `min_count` times, in order of first appearance.
  /// Tokens below the threshold map to <unk>.
  static Vocab build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count = 1);

  std::size_t add(const std::string& token);
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  std::vector<std::size_t> ids(const std::vector<std::string>& tokens) const;

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

}  // namespace latsa
