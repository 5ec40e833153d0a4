// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` documents, used for run configs and checkpoint manifests.
// `#` starts a comment; blank lines are ignored; later keys override earlier ones.
#pragma once

#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

namespace cgdrcn {

using KeyValues = std::map<std::string, std::string>;

class KeyValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);
void write_key_values(std::ostream& out, const KeyValues& kv);

std::optional<double> kv_double(const KeyValues& kv, const std::string& key);
std::optional<long> kv_long(const KeyValues& kv, const std::string& key);
std::optional<bool> kv_bool(const KeyValues& kv, const std::string& key);

}  // namespace cgdrcn
