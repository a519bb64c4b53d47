#pragma once

#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kalm/errors.hpp"
#include "kalm/proposals.hpp"

// httplib drags in <resolv.h>, whose _res macro mangles any Eigen header parsed
// after it; keep httplib last and scrub the macro.
#include <httplib.h>
#ifdef _res
#undef _res
#endif

namespace kalm {

struct RemoteConfig {
    std::string url;
    std::string model;
    std::string token_env = "KALM_BACKEND_TOKEN";
    int retries = 3;
};

// Generic hosted-VLM completion client: JSON {model, messages:[{role, content:[text|image]}]}
// in, JSON {content: "..."} out. Responses must carry a fenced block the parser can read.
class RemoteBackend : public RegionProposer, public MaskSelector {
  public:
    explicit RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
        auto scheme_end = cfg_.url.find("://");
        if (scheme_end == std::string::npos)
            throw ConfigError("backend.url must include a scheme: " + cfg_.url);
        auto path_start = cfg_.url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            base_ = cfg_.url;
            path_ = "/";
        } else {
            base_ = cfg_.url.substr(0, path_start);
            path_ = cfg_.url.substr(path_start);
        }
    }

    RegionProposal propose(const std::vector<const RGBDImage*>& frames,
                           const std::string& description, const GridOverlay& grid,
                           BackendTranscript& transcript) override {
        std::ostringstream prompt;
        prompt << "You are identifying task-relevant regions in a robot workspace.\n"
               << "Task: " << description << "\n"
               << "The final image carries a " << grid.spec.rows << "x" << grid.spec.cols
               << " labeled grid (A1 at top-left). Think step by step about which object and"
               << " part the task needs, then answer with exactly one fenced block:\n"
               << "```\n{\"object\": \"...\", \"part\": \"...\", \"cells\": [\"B2\"]}\n```\n";

        std::vector<std::pair<std::string, std::string>> images;
        for (size_t i = 0; i < frames.size(); ++i)
            images.emplace_back("frame_" + std::to_string(i),
                                encode_ppm(frames[i]->width, frames[i]->height, frames[i]->color));
        images.emplace_back("grid_overlay", encode_ppm(grid.width, grid.height, grid.annotated));

        std::string error_note;
        for (int attempt = 1;; ++attempt) {
            std::string text = complete(prompt.str() + error_note, images);
            try {
                RegionProposal p = parse_proposal(text, grid);
                std::vector<std::string> refs;
                for (const auto& [name, data] : images) refs.push_back(name);
                transcript.append({"region_proposal", prompt.str(), refs, text,
                                   detail::proposal_to_json(p)});
                return p;
            } catch (const ParseError& e) {
                transcript.append({"region_proposal_attempt", prompt.str() + error_note, {},
                                   text, std::string("parse error: ") + e.what()});
                if (attempt >= cfg_.retries) throw;
                error_note = "\nYour previous answer could not be parsed (" +
                             std::string(e.what()) + "). Answer again, fenced block only.\n";
            }
        }
    }

    int select(const RGBDImage& image, const std::vector<MaskCandidate>& masks,
               BackendTranscript& transcript) override {
        if (masks.empty()) throw NoMasksError("no masks to select from");
        if (masks.size() == 1) {
            transcript.append({"mask_selection", "forced", {}, "single surviving mask",
                               nlohmann::json{{"mask", 0}}.dump()});
            return 0;
        }
        std::ostringstream prompt;
        prompt << "The image outlines " << masks.size() << " candidate part masks, numbered 0-"
               << masks.size() - 1 << ". Pick the one the task should act on and answer with"
               << " exactly one fenced block:\n```\n{\"mask\": 0}\n```\n";
        std::vector<uint8_t> outlined = render_mask_outlines(image, masks);
        std::vector<std::pair<std::string, std::string>> images{
            {"mask_outlines", encode_ppm(image.width, image.height, outlined)}};

        std::string error_note;
        for (int attempt = 1;; ++attempt) {
            std::string text = complete(prompt.str() + error_note, images);
            try {
                int idx = parse_selection(text, int(masks.size()));
                transcript.append({"mask_selection", prompt.str(), {"mask_outlines"}, text,
                                   nlohmann::json{{"mask", idx}}.dump()});
                return idx;
            } catch (const ParseError& e) {
                transcript.append({"mask_selection_attempt", prompt.str() + error_note, {},
                                   text, std::string("parse error: ") + e.what()});
                if (attempt >= cfg_.retries) throw;
                error_note = "\nYour previous answer could not be parsed (" +
                             std::string(e.what()) + "). Answer again, fenced block only.\n";
            }
        }
    }

  private:
    static std::string encode_ppm(int w, int h, const std::vector<uint8_t>& rgb) {
        std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
        std::vector<uint8_t> bytes(header.begin(), header.end());
        bytes.insert(bytes.end(), rgb.begin(), rgb.end());
        return base64_encode(bytes.data(), bytes.size());
    }

    std::string complete(const std::string& prompt,
                         const std::vector<std::pair<std::string, std::string>>& images) {
        nlohmann::json content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", prompt}});
        for (const auto& [name, b64] : images)
            content.push_back({{"type", "image"}, {"format", "ppm"}, {"name", name}, {"data", b64}});
        nlohmann::json body{{"model", cfg_.model},
                            {"messages", nlohmann::json::array({nlohmann::json{
                                             {"role", "user"}, {"content", content}}})}};

        httplib::Client client(base_);
        client.set_connection_timeout(10, 0);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token)
            headers.emplace("Authorization", std::string("Bearer ") + token);

        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) throw BackendError("no response from " + cfg_.url);
        if (res->status != 200)
            throw BackendError("backend returned HTTP " + std::to_string(res->status));
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("content") || !j["content"].is_string())
            throw BackendError("backend response is not {content: text}");
        return j["content"].get<std::string>();
    }

    static RegionProposal parse_proposal(const std::string& text, const GridOverlay& grid) {
        auto block = extract_fenced_block(text);
        if (!block) throw ParseError(ParseError::Kind::MissingBlock, "no fenced block in reply");
        nlohmann::json j = nlohmann::json::parse(*block, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("cells") || !j["cells"].is_array())
            throw ParseError(ParseError::Kind::BadJson, "fenced block is not a proposal object");
        RegionProposal p;
        p.object_description = j.value("object", "");
        p.part_description = j.value("part", "");
        for (const auto& c : j["cells"]) {
            if (!c.is_string())
                throw ParseError(ParseError::Kind::BadJson, "cells must be label strings");
            p.cells.push_back(c.get<std::string>());
        }
        p.rationale = text;
        detail::validate_cells(p.cells, grid);
        return p;
    }

    static int parse_selection(const std::string& text, int mask_count) {
        auto block = extract_fenced_block(text);
        if (!block) throw ParseError(ParseError::Kind::MissingBlock, "no fenced block in reply");
        nlohmann::json j = nlohmann::json::parse(*block, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("mask") ||
            !j["mask"].is_number_integer())
            throw ParseError(ParseError::Kind::BadJson, "fenced block is not a mask choice");
        int idx = j["mask"].get<int>();
        if (idx < 0 || idx >= mask_count)
            throw ParseError(ParseError::Kind::IndexOutOfRange,
                             "mask index " + std::to_string(idx) + " of " +
                                 std::to_string(mask_count));
        return idx;
    }

    RemoteConfig cfg_;
    std::string base_;
    std::string path_;
};

}  // namespace kalm
