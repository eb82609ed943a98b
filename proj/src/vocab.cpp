#include "latsa/vocab.hpp"

#include <unordered_map>

#include "latsa/lattice.hpp"

namespace latsa {

Vocab::Vocab() {
  add("<unk>");
  add(kStartToken);
  add(kEndToken);
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& sentence : corpus)
    for (const auto& t : sentence)
      if (counts[t]++ == 0) order.push_back(t);
  Vocab v;
  for (const auto& t : order)
    if (counts[t] >= min_count) v.add(t);
  return v;
}

std::size_t Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocab::ids(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> r;
  r.reserve(tokens.size());
  for (const auto& t : tokens) r.push_back(id(t));
  return r;
}

nlohmann::json Vocab::to_json() const { return tokens_; }

Vocab Vocab::from_json(const nlohmann::json& j) {
  Vocab v;
  for (const auto& t : j) v.add(t.get<std::string>());
  return v;
}

}  // namespace latsa
