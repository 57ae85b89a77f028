// Copyright 2026 The EvSign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>

#include <nlohmann/json.hpp>

namespace evsign::detail {

// Reads j[key] into out when present, with a path-qualified error on a type
// mismatch.
template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out, std::string_view where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const char* expected = "a number";
  bool ok = it->is_number();
  if constexpr (std::is_same_v<V, bool>) {
    expected = "a boolean";
    ok = it->is_boolean();
  } else if constexpr (std::is_unsigned_v<V>) {
    expected = "a non-negative integer";
    ok = it->is_number_unsigned();
  } else if constexpr (std::is_integral_v<V>) {
    expected = "an integer";
    ok = it->is_number_integer();
  } else if constexpr (std::is_same_v<V, std::string>) {
    expected = "a string";
    ok = it->is_string();
  }
  if (!ok) throw std::invalid_argument(std::string(where) + "." + key + ": expected " + expected + ", got " + it->dump());
  out = it->template get<V>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           std::string_view where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const auto k : known) ok = ok || key == k;
    if (!ok) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
  }
}

}  // namespace evsign::detail
