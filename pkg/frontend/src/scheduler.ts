// Debounced single-flight request scheduler for slider-driven previews.
//
// Contract: during a drag at most one request is in flight; a newer value
// cancels the running request; responses are applied only if no newer
// request has started since (sequence number check).

export type Runner<T> = (value: T, signal: AbortSignal,
                         isCurrent: () => boolean) => Promise<void>;

export class DebouncedRequester<T> {
    private timer: ReturnType<typeof setTimeout> | null = null;
    private controller: AbortController | null = null;
    private seq = 0;
    private pending: { value: T } | null = null;

    constructor(private delayMs: number, private run: Runner<T>) {}

    /** Schedule a request for `value`; earlier pending values are dropped. */
    request(value: T): void {
        this.pending = { value };
        if (this.timer !== null) clearTimeout(this.timer);
        this.timer = setTimeout(() => this.fire(), this.delayMs);
    }

    /** True while a request is running. */
    get inFlight(): boolean {
        return this.controller !== null;
    }

    cancel(): void {
        if (this.timer !== null) clearTimeout(this.timer);
        this.timer = null;
        this.pending = null;
        if (this.controller) this.controller.abort();
    }

    private fire(): void {
        this.timer = null;
        if (!this.pending) return;
        const { value } = this.pending;
        this.pending = null;

        if (this.controller) this.controller.abort();
        const controller = new AbortController();
        this.controller = controller;
        const seq = ++this.seq;
        const isCurrent = () => seq === this.seq;

        void this.run(value, controller.signal, isCurrent)
            .catch(() => undefined /* aborted or failed; UI state unchanged */)
            .finally(() => {
                if (this.controller === controller) this.controller = null;
            });
    }
}
