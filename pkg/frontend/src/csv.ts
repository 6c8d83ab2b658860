// Benchmark CSV parsing and the chart geometry, kept pure for testing.

export interface BenchSample {
  msgIndex: number;
  lengthChars: number;
  path: string;
  latencyMs: number;
}

export const EXPECTED_HEADER = "msg_index,length_chars,path,send_ts,recv_ts,latency_ms";

export function parseBenchCsv(text: string): BenchSample[] {
  const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
  if (lines.length === 0 || lines[0].trim() !== EXPECTED_HEADER) {
    throw new Error("not a benchmark CSV: unexpected header");
  }
  const samples: BenchSample[] = [];
  for (const [i, line] of lines.slice(1).entries()) {
    const parts = line.split(",");
    if (parts.length !== 6) {
      throw new Error(`row ${i + 2}: expected 6 columns`);
    }
    const sample = {
      msgIndex: Number(parts[0]),
      lengthChars: Number(parts[1]),
      path: parts[2],
      latencyMs: Number(parts[5]),
    };
    if (
      !Number.isFinite(sample.msgIndex) ||
      !Number.isFinite(sample.lengthChars) ||
      !Number.isFinite(sample.latencyMs)
    ) {
      throw new Error(`row ${i + 2}: non-numeric field`);
    }
    samples.push(sample);
  }
  samples.sort((a, b) => a.msgIndex - b.msgIndex);
  return samples;
}

export function cumulativeSeconds(samples: BenchSample[]): number[] {
  const out: number[] = [];
  let total = 0;
  for (const sample of samples) {
    total += sample.latencyMs / 1000;
    out.push(total);
  }
  return out;
}

export interface Point {
  x: number;
  y: number;
}

/** Scale samples into pixel space; y grows downward as on a canvas. */
export function scatterLayout(
  samples: BenchSample[],
  width: number,
  height: number,
  pad = 30,
): Point[] {
  if (samples.length === 0) return [];
  const maxX = Math.max(...samples.map((s) => s.msgIndex), 1);
  const maxY = Math.max(...samples.map((s) => s.latencyMs), 1e-9);
  return samples.map((s) => ({
    x: pad + (s.msgIndex / maxX) * (width - 2 * pad),
    y: height - pad - (s.latencyMs / maxY) * (height - 2 * pad),
  }));
}

export function lineLayout(values: number[], width: number, height: number, pad = 30): Point[] {
  if (values.length === 0) return [];
  const maxY = Math.max(...values, 1e-9);
  const maxX = Math.max(values.length - 1, 1);
  return values.map((v, i) => ({
    x: pad + (i / maxX) * (width - 2 * pad),
    y: height - pad - (v / maxY) * (height - 2 * pad),
  }));
}
