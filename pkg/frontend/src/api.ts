// Typed client for the inversion/editing REST API.

export interface InvertResponse {
    id: string;
    psnr_x1: number;
    psnr_x2: number;
    urls: { source: string; x1: string; x2: string };
}

export interface DirectionInfo {
    id: string;
    name: string;
    source: string;
    block_range: [number, number];
}

export interface InversionSummary {
    id: string;
    psnr_x1: number;
    psnr_x2: number;
}

export interface HealthInfo {
    status: string;
    checkpoint_hash: string | null;
}

export class ApiError extends Error {
    constructor(public status: number, detail: string) {
        super(`HTTP ${status}: ${detail}`);
    }
}

async function fail(res: Response): Promise<never> {
    let detail = res.statusText;
    try {
        const body = await res.json();
        if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
        // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, detail);
}

export class ApiClient {
    constructor(private base: string = "",
                private fetchFn: typeof fetch = fetch.bind(globalThis)) {}

    async health(): Promise<HealthInfo> {
        const res = await this.fetchFn(`${this.base}/api/health`);
        if (!res.ok) return fail(res);
        return res.json();
    }

    async invert(png: Blob | ArrayBuffer): Promise<InvertResponse> {
        const res = await this.fetchFn(`${this.base}/api/invert`, {
            method: "POST",
            headers: { "Content-Type": "image/png" },
            body: png,
        });
        if (!res.ok) return fail(res);
        return res.json();
    }

    async listInversions(): Promise<InversionSummary[]> {
        const res = await this.fetchFn(`${this.base}/api/inversions`);
        if (!res.ok) return fail(res);
        return res.json();
    }

    async directions(): Promise<DirectionInfo[]> {
        const res = await this.fetchFn(`${this.base}/api/directions`);
        if (!res.ok) return fail(res);
        return res.json();
    }

    async edit(id: string, directionId: string, alpha: number,
               signal?: AbortSignal): Promise<Blob> {
        const res = await this.fetchFn(`${this.base}/api/edit`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ id, direction_id: directionId, alpha }),
            signal,
        });
        if (!res.ok) return fail(res);
        return res.blob();
    }

    async mix(latentFromId: string, featureFromId: string): Promise<Blob> {
        const res = await this.fetchFn(`${this.base}/api/mix`, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({
                latent_from_id: latentFromId,
                feature_from_id: featureFromId,
            }),
        });
        if (!res.ok) return fail(res);
        return res.blob();
    }

    imageUrl(id: string, variant: "source" | "x1" | "x2"): string {
        return `${this.base}/api/inversions/${id}/image?variant=${variant}`;
    }
}
