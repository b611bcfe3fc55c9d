import type { PipelinesInfo, PredictRequest, PredictResponse, WhatifEntry } from "./types";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export interface Client {
  predict(request: PredictRequest): Promise<PredictResponse>;
  whatif(request: PredictRequest, ablations: string[]): Promise<WhatifEntry[]>;
  pipelines(): Promise<PipelinesInfo>;
  health(): Promise<{ status: string }>;
}

async function readError(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { error?: string };
    return body.error ?? res.statusText;
  } catch {
    return res.statusText;
  }
}

export function createClient(baseUrl = "", fetchFn: typeof fetch = fetch): Client {
  async function post<T>(path: string, payload: unknown): Promise<T> {
    const res = await fetchFn(`${baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await readError(res));
    }
    return (await res.json()) as T;
  }

  async function get<T>(path: string): Promise<T> {
    const res = await fetchFn(`${baseUrl}${path}`);
    if (!res.ok) {
      throw new ApiError(res.status, await readError(res));
    }
    return (await res.json()) as T;
  }

  return {
    predict: (request) => post<PredictResponse>("/v1/predict", request),
    whatif: async (request, ablations) => {
      const body = await post<{ results: WhatifEntry[] }>("/v1/whatif", {
        request,
        ablations,
      });
      return body.results;
    },
    pipelines: () => get<PipelinesInfo>("/v1/pipelines"),
    health: () => get<{ status: string }>("/v1/health"),
  };
}
