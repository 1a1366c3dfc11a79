#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {

/// Hook points inside block l: resid_pre is the stream entering the block,
/// resid_post the stream leaving it; attn_out and mlp_out are the two branch
/// outputs before they are added back to the stream.
enum class Site { resid_pre, resid_post, attn_out, mlp_out };

inline constexpr std::array<Site, 4> kAllSites = {Site::resid_pre, Site::resid_post, Site::attn_out, Site::mlp_out};

inline std::string_view site_name(Site site)
{
    switch (site) {
        case Site::resid_pre: return "resid_pre";
        case Site::resid_post: return "resid_post";
        case Site::attn_out: return "attn_out";
        case Site::mlp_out: return "mlp_out";
    }
    return "?";
}

inline Site parse_site(std::string_view name)
{
    for (Site s : kAllSites) {
        if (site_name(s) == name) return s;
    }
    throw InvalidArgument("unknown site '" + std::string(name) + "' (expected resid_pre, resid_post, attn_out or mlp_out)");
}

enum class PositionPolicy { all, final, explicit_list };

inline std::string_view policy_name(PositionPolicy p)
{
    switch (p) {
        case PositionPolicy::all: return "all";
        case PositionPolicy::final: return "final";
        case PositionPolicy::explicit_list: return "explicit";
    }
    return "?";
}

inline PositionPolicy parse_policy(std::string_view name)
{
    if (name == "all") return PositionPolicy::all;
    if (name == "final") return PositionPolicy::final;
    throw InvalidArgument("unknown position policy '" + std::string(name) + "' (expected all or final)");
}

enum class HookMode { capture, add };

/// One intervention or probe on the residual computation.
///
/// Add hooks run before capture hooks at the same site, so captures see the
/// post-intervention activation.
struct HookSpec {
    std::size_t layer = 0;
    Site site = Site::resid_pre;
    PositionPolicy positions = PositionPolicy::all;
    std::vector<std::size_t> explicit_positions;
    HookMode mode = HookMode::capture;
    std::vector<float> vector;  // add mode only
    float scale = 0.0f;         // add mode only

    static HookSpec capture(std::size_t layer, Site site, PositionPolicy positions = PositionPolicy::all)
    {
        HookSpec h;
        h.layer = layer;
        h.site = site;
        h.positions = positions;
        return h;
    }

    static HookSpec add(std::size_t layer, Site site, std::vector<float> vector, float scale,
                        PositionPolicy positions = PositionPolicy::final)
    {
        HookSpec h;
        h.layer = layer;
        h.site = site;
        h.positions = positions;
        h.mode = HookMode::add;
        h.vector = std::move(vector);
        h.scale = scale;
        return h;
    }

    HookSpec at_positions(std::vector<std::size_t> positions_list) const
    {
        HookSpec h = *this;
        h.positions = PositionPolicy::explicit_list;
        h.explicit_positions = std::move(positions_list);
        return h;
    }
};

}  // namespace steerlab
