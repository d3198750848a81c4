// Copyright 2026 The cbct-recon Authors
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

#include "cbct/dataset.hpp"
#include "cbct/error.hpp"
#include "cbct/fdk.hpp"
#include "cbct/geometry.hpp"
#include "cbct/kltv.hpp"
#include "cbct/metrics.hpp"
#include "cbct/phantom.hpp"
#include "cbct/projector.hpp"
#include "cbct/subsample.hpp"
#include "cbct/volio.hpp"
#include "cbct/volume.hpp"
