import time


def pp_time(seconds, space=5):
    """
    Pretty prints a duration in the largest useful unit
    :param seconds: The number of seconds to be pretty printed
    :param space: Width of the number, keeps consecutive lines aligned
    """
    time_counters = [("s", 60), ("m", 60), ("h", 24)]
    remaining = seconds
    for unit, size in time_counters:
        if remaining > size:
            remaining /= size
        else:
            return f"{remaining: {space}.2f}{unit}"
    return f"{remaining: {space}.2f}d"


class SimulationProgress:
    """
    Reports how far a time-stepping run has got, in simulated and wall-clock time.
    Output happens when the completed fraction first passes each multiple of percent_increment.

    Example:
    progress = SimulationProgress(n_steps, step, logger.info)
    for k in range(n_steps):
        advance()
        progress(k + 1)
    """

    def __init__(self, n_steps, step, print_func=print, percent_increment=10):
        """
        :param n_steps: total integration steps of the run
        :param step: integration step in simulated seconds
        :param print_func: called with each progress line, usually a logger method
        """
        self.n_steps = max(int(n_steps), 1)
        self.step = step
        self.percent_increment = percent_increment
        self.next_report = percent_increment
        self.print_func = print_func
        self.times = [time.time()]

    def __call__(self, step_index):
        self.update(step_index)

    def update(self, step_index):
        percent_done = 100.0 * step_index / self.n_steps
        if percent_done < self.next_report:
            return
        self.times.append(time.time())
        while percent_done >= self.next_report:
            self.next_report += self.percent_increment
        elapsed = self.times[-1] - self.times[0]
        remaining = elapsed * self.n_steps / step_index - elapsed
        self.print_func(
            f"{percent_done:5.1f}% complete (t = {step_index * self.step:.3f} s). "
            f"Wall time elapsed: {pp_time(elapsed)}. Remaining: {pp_time(remaining)}."
        )
