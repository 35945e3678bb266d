/*
 * Copyright 2026 The sdrpesq Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include "sdrpesq/audio_io.hpp"
#include "sdrpesq/bark_table.hpp"
#include "sdrpesq/cli.hpp"
#include "sdrpesq/config.hpp"
#include "sdrpesq/error.hpp"
#include "sdrpesq/fft.hpp"
#include "sdrpesq/grad_fit.hpp"
#include "sdrpesq/grid.hpp"
#include "sdrpesq/joint_loss.hpp"
#include "sdrpesq/loss_report.hpp"
#include "sdrpesq/masks.hpp"
#include "sdrpesq/pesq_loss.hpp"
#include "sdrpesq/sdr_loss.hpp"
#include "sdrpesq/spectral.hpp"
