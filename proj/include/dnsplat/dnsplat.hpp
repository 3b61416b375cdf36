// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/backward.hpp"
#include "dnsplat/densify.hpp"
#include "dnsplat/evaluation.hpp"
#include "dnsplat/gaussian.hpp"
#include "dnsplat/geometry.hpp"
#include "dnsplat/gradcheck.hpp"
#include "dnsplat/image_io.hpp"
#include "dnsplat/losses.hpp"
#include "dnsplat/marching_cubes.hpp"
#include "dnsplat/mesh.hpp"
#include "dnsplat/objective.hpp"
#include "dnsplat/optimizer.hpp"
#include "dnsplat/pipeline.hpp"
#include "dnsplat/ply.hpp"
#include "dnsplat/rasterizer.hpp"
#include "dnsplat/synthetic.hpp"
#include "dnsplat/train.hpp"
#include "dnsplat/tsdf.hpp"
