import json


class StageOptions(dict):
    """
    The configuration sections a pipeline stage depends on.

    ``prepared_options`` flattens them to a stable list of ``key-value``
    strings, which is what stage stamps are hashed from.
    """

    def prepared_options(self):
        prepared_opts = []
        for section, values in sorted(self.items()):
            if not isinstance(values, dict):
                prepared_opts.append('{0}-{1}'.format(
                    section, _format(values)))
                continue
            for key, value in sorted(values.items()):
                prepared_opts.append('{0}.{1}-{2}'.format(
                    section, key, _format(value)))
        return prepared_opts


def _format(value):
    if isinstance(value, str):
        return value
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return json.dumps(value, sort_keys=True, separators=(',', ':'))
