export interface RankedProb {
  label: string;
  probability: number;
}

/** Distribution as a descending list; exact ties fall back to label order,
 * matching the server's own tie rule, so the highlighted row is first. */
export function rankDistribution(dist: Record<string, number>): RankedProb[] {
  return Object.entries(dist)
    .map(([label, probability]) => ({ label, probability }))
    .sort((a, b) => {
      if (a.probability !== b.probability) return b.probability - a.probability;
      // plain code-point order, not locale collation: the server breaks
      // ties the same way
      return a.label < b.label ? -1 : a.label > b.label ? 1 : 0;
    });
}

export function formatPercent(p: number): string {
  return `${(p * 100).toFixed(1)}%`;
}

export function formatMs(ms: number): string {
  return `${ms.toFixed(1)} ms`;
}

export function parseResolution(res: string): { width: number; height: number } {
  const m = /^(\d+)x(\d+)$/.exec(res);
  if (!m) throw new Error(`bad resolution string: ${res}`);
  return { width: Number(m[1]), height: Number(m[2]) };
}
