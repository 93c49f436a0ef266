#ifndef FUSIONKIT_TSV_HPP
#define FUSIONKIT_TSV_HPP

#include "fusionkit/error_analysis.hpp"

#include <map>
#include <string>
#include <vector>

namespace fusionkit {

/// Loads utterances from a TSV with columns id, mission, channel, seen (0/1),
/// text. A leading header row ("id\t...") is skipped. Text is normalized into
/// tokens. Malformed rows raise ValidationError naming the line.
std::vector<Utterance> load_transcripts(const std::string& path);

/// Flat key=value config file; '#' starts a comment, blank lines are ignored.
std::map<std::string, std::string> load_config(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace fusionkit

#endif
